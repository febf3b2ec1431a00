#include <algorithm>
#include <cmath>
#include <numeric>

#include "mwpkd/decode.hpp"
#include "mwpkd/distill.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

using Eigen::MatrixXd;

int EncoderStack::output_dim() const {
  if (joint != nullptr) return joint->out_dim;
  if (vectors != nullptr) return static_cast<int>(vectors->dim);
  if (student != nullptr) return student->cfg.d_model;
  return 0;
}

namespace {

void check_encoder(const EncoderStack& enc) {
  if ((enc.vectors == nullptr) == (enc.student == nullptr)) {
    fail(ErrorKind::Param, "encoder needs exactly one of precomputed vectors or a student");
  }
  if (enc.joint != nullptr) {
    if (enc.joint->method != Method::LINEAR) fail(ErrorKind::Param, "only a LINEAR compressor can be trained jointly");
    const int in = enc.vectors != nullptr ? static_cast<int>(enc.vectors->dim) : enc.student->cfg.d_model;
    if (enc.joint->in_dim != in) {
      fail(ErrorKind::DimMismatch, "joint compressor expects " + std::to_string(enc.joint->in_dim) +
                                       " inputs, encoder gives " + std::to_string(in));
    }
  }
}

// Encoder output before the joint compressor, one matrix per record.
class BaseVectors {
 public:
  BaseVectors(const EncoderStack& enc, const std::vector<MwpRecord>& records) : enc_(enc), records_(records) {
    if (enc.vectors != nullptr) index_ = align(*enc.vectors, records);
  }

  MatrixXd get(std::size_t i) const {
    if (enc_.vectors != nullptr) return enc_.vectors->problems[index_[i]].matrix.cast<double>();
    return student_forward<double>(*enc_.student, records_[i].token_ids);
  }

 private:
  const EncoderStack& enc_;
  const std::vector<MwpRecord>& records_;
  std::vector<std::size_t> index_;
};

MatrixXd apply_joint(const Projection* joint, const MatrixXd& V0) {
  if (joint == nullptr) return V0;
  return (V0.rowwise() - joint->mean.transpose()) * joint->components.transpose();
}

struct Tally {
  double hits = 0, total = 0, answer_hits = 0;
};

void score_one(const HeadParams& h, const MatrixXd& V, const MwpRecord& r, const DecoderConfig& cfg, Tally& t) {
  switch (h.task) {
    case Task::RELATION: {
      const auto p = predict(h, V, r);
      t.hits += (p.prediction == (r.relation_label ? "1" : "0")) ? 1 : 0;
      t.total += 1;
      break;
    }
    case Task::EQUATION: {
      const auto out = tree_decode(V, r.quantity_indices, h.tree, cfg.max_depth);
      const auto gold = r.equation();
      const bool match = cfg.canonicalize ? canonicalize_commutative(out.tree) == canonicalize_commutative(gold)
                                          : out.tree == gold;
      t.hits += match ? 1 : 0;
      try {
        const auto q = r.quantity_doubles();
        if (answer_matches(eval_expr(out.tree, q), r.answer)) t.answer_hits += 1;
      } catch (const Error&) {
        // an unevaluable prediction is simply wrong
      }
      t.total += 1;
      break;
    }
    case Task::POS: {
      const auto tags = pos_argmax(pos_predict(V, h.pos));
      for (std::size_t i = 0; i < tags.size(); ++i) t.hits += tags[i] == r.pos_tags[i] ? 1 : 0;
      t.total += static_cast<double>(tags.size());
      break;
    }
  }
}

TaskScores finish(const Tally& t, Task task, std::size_t n_records) {
  TaskScores s;
  s.accuracy = t.total > 0 ? t.hits / t.total : 0.0;
  if (task == Task::EQUATION && n_records > 0) s.answer_accuracy = t.answer_hits / static_cast<double>(n_records);
  return s;
}

void check_config(const DecoderConfig& cfg) {
  if (cfg.epochs < 0) fail(ErrorKind::Param, "epochs must be non-negative");
  if (cfg.batch_size < 1) fail(ErrorKind::Param, "batch_size must be positive");
  if (!(cfg.learning_rate > 0)) fail(ErrorKind::Param, "learning_rate must be positive");
  if (cfg.max_depth < 0) fail(ErrorKind::Param, "max_depth must be non-negative");
  if (cfg.eval_every < 1) fail(ErrorKind::Param, "eval_every must be positive");
}

}  // namespace

TaskScores evaluate_head(const HeadParams& h, EncoderStack& encoder, const std::vector<MwpRecord>& records,
                         const DecoderConfig& cfg) {
  check_encoder(encoder);
  const BaseVectors base(encoder, records);
  Tally t;
  for (std::size_t i = 0; i < records.size(); ++i) score_one(h, apply_joint(encoder.joint, base.get(i)), records[i], cfg, t);
  return finish(t, h.task, records.size());
}

DecoderResult train_decoder(EncoderStack& encoder, const std::vector<MwpRecord>& train,
                            const std::vector<MwpRecord>& eval, const DecoderConfig& cfg) {
  check_config(cfg);
  check_encoder(encoder);
  if (train.empty()) fail(ErrorKind::Param, "no training records");
  const int dim = encoder.output_dim();

  DecoderResult res;
  res.head = init_head(cfg.task, dim, cfg.seed, cfg.constants);
  HeadParams& head = res.head;

  const bool student_trains = encoder.student != nullptr && encoder.train_student;
  const BaseVectors base(encoder, train);
  // With a frozen encoder the base vectors never change.
  std::vector<MatrixXd> cached;
  if (!student_trains) {
    cached.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) cached.push_back(base.get(i));
  }

  auto full_loss = [&]() {
    double total = 0.0;
    HeadParams scratch = zero_like(head);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const MatrixXd V = apply_joint(encoder.joint, student_trains ? base.get(i) : cached[i]);
      total += head_loss(head, V, train[i], scratch, nullptr);
    }
    return total / static_cast<double>(train.size());
  };

  res.initial_loss = full_loss();
  res.initial = evaluate_head(head, encoder, eval, cfg);

  // Parameter list: head tensors, then joint components, then student tensors.
  std::vector<MatrixXd*> params;
  head.for_each_tensor([&](const std::string&, MatrixXd& t) { params.push_back(&t); });
  if (encoder.joint != nullptr) params.push_back(&encoder.joint->components);
  if (student_trains)
    for (auto* t : tensor_list(*encoder.student)) params.push_back(t);

  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  OptimizerState state;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  res.final_scores = res.initial;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      HeadParams g = zero_like(head);
      MatrixXd g_joint;
      if (encoder.joint != nullptr) g_joint = MatrixXd::Zero(encoder.joint->components.rows(), encoder.joint->components.cols());

      // d loss / d V0 for one record, accumulating head and joint gradients.
      auto record_loss = [&](std::size_t i, const MatrixXd& V0, MatrixXd* dV0) {
        const MatrixXd V = apply_joint(encoder.joint, V0);
        MatrixXd dV = MatrixXd::Zero(V.rows(), V.cols());
        const bool need_dv = encoder.joint != nullptr || dV0 != nullptr;
        const double loss = head_loss(head, V, train[i], g, need_dv ? &dV : nullptr) * inv;
        dV *= inv;
        if (encoder.joint != nullptr) {
          const MatrixXd centered = V0.rowwise() - encoder.joint->mean.transpose();
          g_joint += dV.transpose() * centered;
          if (dV0 != nullptr) *dV0 = dV * encoder.joint->components;
        } else if (dV0 != nullptr) {
          *dV0 = dV;
        }
        return loss;
      };

      std::vector<const MatrixXd*> grads;
      GradientSet student_grads;
      if (student_trains) {
        std::vector<std::vector<std::int64_t>> batch;
        for (std::size_t b = start; b < stop; ++b) batch.push_back(train[order[b]].token_ids);
        LossHead lh = [&](std::size_t k, const MatrixXd& hidden, MatrixXd& d_hidden) {
          return record_loss(order[start + k], hidden, &d_hidden);
        };
        auto br = student_backward(*encoder.student, batch, lh);
        epoch_total += br.loss * static_cast<double>(stop - start);
        student_grads = std::move(br.grads);
      } else {
        for (std::size_t b = start; b < stop; ++b) {
          epoch_total += record_loss(order[b], cached[order[b]], nullptr) * static_cast<double>(stop - start);
        }
      }

      std::vector<MatrixXd*> grad_ptrs;
      g.for_each_tensor([&](const std::string&, MatrixXd& t) { grad_ptrs.push_back(&t); });
      if (encoder.joint != nullptr) grad_ptrs.push_back(&g_joint);
      if (student_trains)
        for (auto* t : tensor_list(student_grads)) grad_ptrs.push_back(t);
      clip_global_norm(grad_ptrs, cfg.clip_norm);
      grads.assign(grad_ptrs.begin(), grad_ptrs.end());
      adam_step(params, grads, state, adam);
    }
    res.epoch_loss.push_back(epoch_total / static_cast<double>(train.size()));
    res.epochs_run = epoch;

    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      res.final_scores = evaluate_head(head, encoder, eval, cfg);
      res.curve.push_back(res.final_scores);
      if (cfg.on_epoch) cfg.on_epoch(epoch, res.epoch_loss.back(), res.final_scores);
      if (cfg.stop_at_perfect && res.final_scores.accuracy >= 1.0) break;
    }
  }
  return res;
}

}  // namespace mwpkd
