#include "mwpkd/distill.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

using Eigen::MatrixXd;

namespace {

std::int64_t masked_count(const MatrixXd& z, const std::vector<bool>* mask) {
  if (mask == nullptr) return z.size();
  std::int64_t rows = 0;
  for (bool keep : *mask) rows += keep ? 1 : 0;
  return rows * z.cols();
}

// Sum of squared differences over unmasked rows, and the unscaled residual.
double masked_residual(const MatrixXd& z_T, const MatrixXd& z_S, const std::vector<bool>* mask, MatrixXd& diff) {
  diff = z_S - z_T;
  if (mask != nullptr) {
    for (Eigen::Index i = 0; i < diff.rows(); ++i)
      if (!(*mask)[static_cast<std::size_t>(i)]) diff.row(i).setZero();
  }
  return diff.squaredNorm();
}

}  // namespace

KdLoss kd_loss(const MatrixXd& z_T, const MatrixXd& z_S, double t, const std::vector<bool>* row_mask) {
  if (z_T.rows() != z_S.rows() || z_T.cols() != z_S.cols()) {
    fail(ErrorKind::Shape, "teacher and student vectors differ in shape");
  }
  if (!(t > 0.0)) fail(ErrorKind::Param, "temperature must be positive");
  if (row_mask != nullptr && row_mask->size() != static_cast<std::size_t>(z_T.rows())) {
    fail(ErrorKind::Shape, "mask length does not match row count");
  }
  KdLoss out;
  const auto count = masked_count(z_T, row_mask);
  MatrixXd diff;
  const double sq = masked_residual(z_T, z_S, row_mask, diff);
  if (count == 0) {
    out.grad = MatrixXd::Zero(z_S.rows(), z_S.cols());
    return out;
  }
  const double denom = t * t * static_cast<double>(count);
  out.loss = sq / denom;
  out.grad = 2.0 * diff / denom;
  return out;
}

void adam_step(const std::vector<MatrixXd*>& params, const std::vector<const MatrixXd*>& grads,
               OptimizerState& state, const AdamConfig& cfg) {
  if (params.size() != grads.size()) fail(ErrorKind::Shape, "parameter and gradient lists differ in length");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.push_back(MatrixXd::Zero(p->rows(), p->cols()));
      state.v.push_back(MatrixXd::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) fail(ErrorKind::Shape, "optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->rows() != params[i]->rows() || grads[i]->cols() != params[i]->cols() ||
        state.m[i].rows() != params[i]->rows() || state.m[i].cols() != params[i]->cols()) {
      fail(ErrorKind::Shape, "tensor " + std::to_string(i) + " shape mismatch in optimizer");
    }
    if (!grads[i]->allFinite()) fail(ErrorKind::NonFinite, "gradient tensor " + std::to_string(i) + " is not finite");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * *grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i]->cwiseAbs2();
    params[i]->array() -=
        cfg.learning_rate * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + cfg.eps);
  }
}

double clip_global_norm(const std::vector<MatrixXd*>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* g : grads) *g *= scale;
  }
  return norm;
}

std::vector<MatrixXd*> tensor_list(StudentParams& p) {
  std::vector<MatrixXd*> out;
  p.for_each_tensor([&](const std::string&, MatrixXd& t) { out.push_back(&t); });
  return out;
}

std::vector<const MatrixXd*> tensor_list(const StudentParams& p) {
  std::vector<const MatrixXd*> out;
  p.for_each_tensor([&](const std::string&, const MatrixXd& t) { out.push_back(&t); });
  return out;
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) fail(ErrorKind::Param, "temperature must be positive");
  if (!(adam.learning_rate > 0.0)) fail(ErrorKind::Param, "learning_rate must be positive");
  if (batch_size < 1) fail(ErrorKind::Param, "batch_size must be >= 1");
  if (stage1_steps < 0 || stage2_steps < 0) fail(ErrorKind::Param, "step counts must be non-negative");
}

std::string log_to_jsonl(const std::vector<DistillLogRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["stage"] = r.stage;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    j["wall_ms"] = r.wall_ms;
    if (r.param_checksum) j["param_checksum"] = *r.param_checksum;
    out += j.dump();
    out += '\n';
  }
  return out;
}

DistillTargets prepare_targets(const EmbeddingSet& teacher, const DistillConfig& cfg, const StudentConfig& student) {
  teacher.validate();
  const int out_dim = cfg.compressor ? cfg.compressor->out_dim : static_cast<int>(teacher.dim);
  if (cfg.compressor && cfg.compressor->in_dim != static_cast<int>(teacher.dim)) {
    fail(ErrorKind::DimMismatch, "teacher dim " + std::to_string(teacher.dim) + " != compressor in_dim " +
                                     std::to_string(cfg.compressor->in_dim));
  }
  if (out_dim != student.d_model) {
    fail(ErrorKind::DimMismatch, "target dim " + std::to_string(out_dim) + " != student d_model " +
                                     std::to_string(student.d_model));
  }
  DistillTargets d;
  d.source_tag = teacher.source_tag;
  const MatrixXd stacked = teacher.stacked();
  const MatrixXd compressed = cfg.compressor ? apply_projection(*cfg.compressor, stacked) : stacked;
  Eigen::Index row = 0;
  for (const auto& p : teacher.problems) {
    const auto n = p.matrix.rows();
    if (static_cast<Eigen::Index>(p.token_ids.size()) != n) {
      fail(ErrorKind::Validation, "problem " + p.id + " has no token ids matching its vectors");
    }
    d.ids.push_back(p.id);
    d.token_ids.push_back(p.token_ids);
    d.targets.push_back(compressed.middleRows(row, n));
    std::vector<bool> mask(static_cast<std::size_t>(n), true);
    if (cfg.mask_special && p.special.size() == static_cast<std::size_t>(n)) {
      for (Eigen::Index i = 0; i < n; ++i) mask[static_cast<std::size_t>(i)] = !p.special[static_cast<std::size_t>(i)];
    }
    d.row_mask.push_back(std::move(mask));
    row += n;
  }
  return d;
}

double distill_eval_loss(const StudentParams& student, const DistillTargets& data, double temperature) {
  double sq = 0.0;
  std::int64_t count = 0;
  for (std::size_t b = 0; b < data.targets.size(); ++b) {
    const MatrixXd h = student_forward<double>(student, data.token_ids[b]);
    MatrixXd diff;
    sq += masked_residual(data.targets[b], h, &data.row_mask[b], diff);
    count += masked_count(h, &data.row_mask[b]);
  }
  return count == 0 ? 0.0 : sq / (temperature * temperature * static_cast<double>(count));
}

namespace {

void check_stage_alignment(const DistillTargets& a, const DistillTargets& b) {
  if (a.ids.size() != b.ids.size()) {
    fail(ErrorKind::Alignment, "stage files hold " + std::to_string(a.ids.size()) + " and " +
                                   std::to_string(b.ids.size()) + " problems");
  }
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    if (a.ids[i] != b.ids[i] || a.token_ids[i] != b.token_ids[i]) {
      fail(ErrorKind::Alignment, "stage files disagree at problem " + a.ids[i]);
    }
  }
}

StageSummary run_stage(StudentParams& student, const DistillTargets& data, const DistillConfig& cfg, int stage,
                       std::int64_t steps, Rng& rng, std::vector<DistillLogRow>& log) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start).count();
  };
  StageSummary s;
  s.source_tag = data.source_tag;
  s.steps = steps;
  s.start_checksum = param_checksum(student);
  s.initial_loss = distill_eval_loss(student, data, cfg.temperature);
  log.push_back({0, stage, s.initial_loss, cfg.adam.learning_rate, elapsed(), hex64(s.start_checksum)});

  const std::size_t n = data.targets.size();
  if (n == 0) fail(ErrorKind::Validation, "stage " + std::to_string(stage) + " has no problems");
  const bool full_batch = static_cast<std::size_t>(cfg.batch_size) >= n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = n;
  OptimizerState opt;
  const double t2 = cfg.temperature * cfg.temperature;

  for (std::int64_t step = 1; step <= steps; ++step) {
    std::vector<std::size_t> pick;
    if (full_batch) {
      pick.resize(n);
      std::iota(pick.begin(), pick.end(), 0);
    } else {
      while (pick.size() < static_cast<std::size_t>(cfg.batch_size)) {
        if (cursor == n) {
          rng.shuffle(order);
          cursor = 0;
        }
        pick.push_back(order[cursor++]);
      }
    }
    std::vector<std::vector<std::int64_t>> batch;
    std::int64_t count = 0;
    for (auto i : pick) {
      batch.push_back(data.token_ids[i]);
      count += masked_count(data.targets[i], &data.row_mask[i]);
    }
    const double denom = t2 * static_cast<double>(std::max<std::int64_t>(count, 1));
    BackwardOptions bopts;
    bopts.threads = cfg.threads;
    bopts.dropout_rng = student.cfg.dropout_rate > 0.0 ? &rng : nullptr;
    auto result = student_backward(
        student, batch,
        [&](std::size_t b, const MatrixXd& h, MatrixXd& dh) {
          const auto i = pick[b];
          const double sq = masked_residual(data.targets[i], h, &data.row_mask[i], dh);
          dh *= 2.0 / denom;
          return sq / denom;
        },
        bopts);
    auto grads = tensor_list(result.grads);
    clip_global_norm(grads, cfg.clip_norm);
    adam_step(tensor_list(student), std::vector<const MatrixXd*>(grads.begin(), grads.end()), opt, cfg.adam);
    log.push_back({step, stage, result.loss, cfg.adam.learning_rate, elapsed(), std::nullopt});
  }
  s.end_checksum = param_checksum(student);
  s.final_loss = distill_eval_loss(student, data, cfg.temperature);
  log.push_back({steps, stage, s.final_loss, cfg.adam.learning_rate, elapsed(), hex64(s.end_checksum)});
  return s;
}

}  // namespace

DistillResult train_distill(StudentParams student, const DistillConfig& cfg, const EmbeddingSet& stage1,
                            const EmbeddingSet* stage2) {
  cfg.validate();
  student.cfg.validate();
  const DistillTargets t1 = prepare_targets(stage1, cfg, student.cfg);
  std::optional<DistillTargets> t2;
  if (stage2 != nullptr) {
    t2 = prepare_targets(*stage2, cfg, student.cfg);
    check_stage_alignment(t1, *t2);
  }
  DistillResult out;
  Rng rng(cfg.seed);
  out.stages.push_back(run_stage(student, t1, cfg, 1, cfg.stage1_steps, rng, out.log));
  if (!cfg.stage1_checkpoint.empty()) save_student(student, cfg.stage1_checkpoint);
  if (t2) out.stages.push_back(run_stage(student, *t2, cfg, 2, cfg.stage2_steps, rng, out.log));
  out.student = std::move(student);
  return out;
}

DistillResult train_distill(StudentParams student, const DistillConfig& cfg) {
  const EmbeddingSet s1 = read_embeddings(cfg.stage1_path);
  if (cfg.stage2_path.empty()) return train_distill(std::move(student), cfg, s1, nullptr);
  const EmbeddingSet s2 = read_embeddings(cfg.stage2_path);
  return train_distill(std::move(student), cfg, s1, &s2);
}

}  // namespace mwpkd
