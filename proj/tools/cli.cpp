#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/compress.hpp"
#include "mwpkd/corpus.hpp"
#include "mwpkd/decode.hpp"
#include "mwpkd/distill.hpp"
#include "mwpkd/embeddings.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/harness.hpp"
#include "mwpkd/rng.hpp"
#include "mwpkd/student.hpp"
#include "mwpkd/synth.hpp"
#include "mwpkd/toy.hpp"

namespace mwpkd::cli {

namespace {

using Eigen::MatrixXd;
using json = nlohmann::ordered_json;

struct Globals {
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int precision = 64;
  bool quiet = false;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  const Globals& g;

  void note(const std::string& line) const {
    if (!g.quiet) err << line << '\n';
  }
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_commas(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      fail(ErrorKind::Param, std::string("bad number in ") + what + ": " + item);
    }
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s, const char* what) {
  std::vector<int> out;
  for (double v : parse_doubles(s, what)) {
    if (v != static_cast<int>(v)) fail(ErrorKind::Param, std::string(what) + " must be integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

Method method_arg(const std::string& s) {
  const auto m = parse_method(s);
  if (!m) fail(ErrorKind::Param, "unknown method " + s);
  return *m;
}

std::vector<ReportTask> tasks_arg(const std::string& s) {
  std::vector<ReportTask> out;
  for (const auto& t : split_commas(s)) {
    const auto r = parse_report_task(t);
    if (!r) fail(ErrorKind::Param, "unknown task " + t);
    out.push_back(*r);
  }
  return out;
}

Task head_task_arg(const std::string& s) {
  const auto t = parse_task(s);
  if (!t) fail(ErrorKind::Param, "unknown task " + s + " (RELATION, EQUATION or POS)");
  return *t;
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    atomic_write(path, text);
  }
}

// Token rows of `set`, optionally deduplicated, sampled down to `cap` rows (0 keeps all).
struct RowSample {
  MatrixXd X;
  std::vector<std::size_t> problem, token;
};

RowSample sample_rows(const EmbeddingSet& set, int cap, std::uint64_t seed, bool dedupe) {
  std::set<std::vector<float>> seen;
  RowSample all;
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t p = 0; p < set.problems.size(); ++p) {
    const auto& m = set.problems[p].matrix;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (dedupe) {
        std::vector<float> row(m.row(i).data(), m.row(i).data() + m.cols());
        if (!seen.insert(std::move(row)).second) continue;
      }
      where.emplace_back(p, static_cast<std::size_t>(i));
    }
  }
  std::vector<std::size_t> order(where.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (cap > 0 && order.size() > static_cast<std::size_t>(cap)) {
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(cap));
    std::sort(order.begin(), order.end());
  }
  all.X.resize(static_cast<Eigen::Index>(order.size()), set.dim);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto [p, i] = where[order[k]];
    all.X.row(static_cast<Eigen::Index>(k)) = set.problems[p].matrix.row(static_cast<Eigen::Index>(i)).cast<double>();
    all.problem.push_back(p);
    all.token.push_back(i);
  }
  return all;
}

struct FitOptions {
  int neighbors = 10;
  double perplexity = 30.0;
  int iters = 1000;
  bool standardize = false;
  std::string criterion = "variance";
  std::uint64_t seed = 0;
};

Projection fit_method(Method m, const MatrixXd& X, int dim, const FitOptions& o) {
  switch (m) {
    case Method::LINEAR: return random_linear(static_cast<int>(X.cols()), dim, o.seed);
    case Method::PCA: return fit_pca(X, dim, o.standardize);
    case Method::MDS: {
      MdsOptions mo;
      mo.neighbors_k = o.neighbors;
      return fit_classical_mds(X, dim, mo);
    }
    case Method::LLE: return fit_lle(X, dim, o.neighbors);
    case Method::ISOMAP: return fit_isomap(X, dim, o.neighbors);
    case Method::TSNE2D: {
      if (dim != 2) fail(ErrorKind::Param, "TSNE2D only produces 2 dimensions");
      TsneOptions to;
      to.perplexity = o.perplexity;
      to.iters = o.iters;
      to.seed = o.seed;
      return fit_tsne2d(X, to);
    }
    case Method::PRUNE: {
      const auto c = o.criterion == "absmean" ? PruneCriterion::ABSMEAN : PruneCriterion::VARIANCE;
      if (o.criterion != "absmean" && o.criterion != "variance") fail(ErrorKind::Param, "criterion must be variance or absmean");
      return prune_dims(X, dim, c);
    }
  }
  fail(ErrorKind::Param, "unsupported method");
}

bool is_manifold(Method m) { return m == Method::MDS || m == Method::LLE || m == Method::ISOMAP; }

// Embedding of the fitted rows themselves.
MatrixXd fitted_output(const Projection& p, const MatrixXd& X) {
  if (p.method == Method::TSNE2D || is_manifold(p.method)) return p.fitted_embedding;
  return apply_projection(p, X);
}

std::vector<MwpRecord> records_for(const std::string& path) { return load_dataset(path); }

// Train/eval records: an explicit eval file, or a contiguous split of `data`.
std::pair<std::vector<MwpRecord>, std::vector<MwpRecord>> train_eval(const std::string& data,
                                                                     const std::string& eval_data,
                                                                     const std::string& split) {
  auto records = records_for(data);
  if (!eval_data.empty()) return {records, records_for(eval_data)};
  if (split.empty()) return {records, records};
  const auto f = parse_doubles(split, "--split");
  if (f.size() != 3) fail(ErrorKind::Param, "--split takes train,dev,test fractions");
  auto s = split_dataset(records, {f[0], f[1], f[2]});
  // Evaluate on test; fall back to dev when the test share is empty.
  return {s.train, s.test.empty() ? s.dev : s.test};
}

void decoder_options(CLI::App* sc, DecoderConfig& d, std::string& constants) {
  sc->add_option("--epochs", d.epochs, "Training epochs")->capture_default_str();
  sc->add_option("--batch-size", d.batch_size, "Records per step")->capture_default_str();
  sc->add_option("--lr", d.learning_rate, "Adam learning rate")->capture_default_str();
  sc->add_option("--clip", d.clip_norm, "Global gradient-norm clip (0 disables)")->capture_default_str();
  sc->add_option("--max-depth", d.max_depth, "Equation depth cap")->capture_default_str();
  sc->add_option("--constants", constants, "Comma-separated constant tokens")->capture_default_str();
  sc->add_flag("--canonicalize", d.canonicalize, "Compare equations up to commutative reordering");
  sc->add_flag("--stop-at-perfect", d.stop_at_perfect, "Stop once eval accuracy reaches 1");
}

void finish_decoder(DecoderConfig& d, const std::string& constants) { d.constants = split_commas(constants); }

json scores_json(const TaskScores& s, Task t) {
  json j;
  j["accuracy"] = s.accuracy;
  if (t == Task::EQUATION) j["answer_accuracy"] = s.answer_accuracy;
  return j;
}

// ---- subcommands ----

struct SynthArgs {
  std::int64_t n = 0;
  std::uint64_t seed = 0;
  std::string mix, out;
};

int cmd_synth(const SynthArgs& a, const Io& io) {
  const auto mix = a.mix.empty() ? uniform_mix() : parse_doubles(a.mix, "--mix");
  const auto records = synth_generate(a.n, a.seed, mix);
  write_text(a.out, serialize_dataset(records), io.out);
  io.note("wrote " + std::to_string(records.size()) + " records");
  return kExitOk;
}

struct ToyArgs {
  std::string data, out, source_tag = "toy";
  int dim = 32;
  std::int64_t vocab_size = 0;
  std::uint64_t seed = 0;
  double positional_scale = 0.0;
};

int cmd_toy(const ToyArgs& a, const Io& io) {
  const auto records = records_for(a.data);
  std::int64_t vocab = a.vocab_size;
  if (vocab == 0) {
    vocab = static_cast<std::int64_t>(synth_vocab().size());
    for (const auto& r : records)
      for (auto id : r.token_ids) vocab = std::max(vocab, id + 1);
  }
  const auto set = toy_teacher(records, a.dim, vocab, a.seed, a.positional_scale, a.source_tag);
  write_embeddings(set, a.out);
  io.note("wrote " + std::to_string(set.problems.size()) + " problems, dim " + std::to_string(set.dim));
  return kExitOk;
}

struct StatsArgs {
  std::string in, out;
};

int cmd_stats(const StatsArgs& a, const Io& io) {
  const auto set = read_embeddings(a.in);
  const auto s = dim_stats(set.stacked());
  json j;
  j["dim"] = set.dim;
  j["problems"] = set.problems.size();
  j["tokens"] = set.token_count();
  std::vector<int> constant;
  for (std::size_t i = 0; i < s.constant_dims.size(); ++i)
    if (s.constant_dims[i]) constant.push_back(static_cast<int>(i));
  j["constant_dims"] = constant;
  j["pooled_count"] = s.pooled_count;
  j["pooled_skewness"] = s.pooled_skewness;
  j["pooled_excess_kurtosis"] = s.pooled_excess_kurtosis;
  j["approx_normal"] = s.approx_normal;
  j["histogram"] = {{"range", {-kHistogramRange, kHistogramRange}},
                    {"counts", std::vector<std::int64_t>(s.histogram.begin(), s.histogram.end())}};
  j["per_dim_mean"] = std::vector<double>(s.per_dim_mean.data(), s.per_dim_mean.data() + s.per_dim_mean.size());
  j["per_dim_var"] = std::vector<double>(s.per_dim_var.data(), s.per_dim_var.data() + s.per_dim_var.size());
  write_text(a.out, j.dump(2) + "\n", io.out);
  return kExitOk;
}

struct CompressArgs {
  std::string in, out, method, projection_in, projection_out, source_tag;
  int dim = 0;
  int fit_rows = 2000;
  FitOptions fit;
};

int cmd_compress(const CompressArgs& a, const Io& io) {
  const auto set = read_embeddings(a.in);
  Projection p;
  EmbeddingSet result;
  const std::string tag = a.source_tag.empty() ? set.source_tag : a.source_tag;
  if (!a.projection_in.empty()) {
    p = load_projection(a.projection_in);
    result = project_set(set, p, tag);
  } else {
    if (a.method.empty() || a.dim < 1) fail(ErrorKind::Param, "compress needs --method and --dim (or --projection-in)");
    const Method m = method_arg(a.method);
    if (m == Method::TSNE2D) {
      // No out-of-sample map: fit every row and write the embedding back in place.
      const auto rows = sample_rows(set, 0, a.fit.seed, false);
      p = fit_method(m, rows.X, a.dim, a.fit);
      result = set;
      result.dim = 2;
      result.source_tag = tag;
      Eigen::Index k = 0;
      for (auto& pe : result.problems) {
        RowMatrixF y(pe.matrix.rows(), 2);
        for (Eigen::Index i = 0; i < y.rows(); ++i, ++k) y.row(i) = p.fitted_embedding.row(k).cast<float>();
        pe.matrix = std::move(y);
      }
    } else {
      const auto rows = sample_rows(set, is_manifold(m) ? a.fit_rows : 0, a.fit.seed, is_manifold(m));
      // Apply the stored (32-bit) form so the output matches --projection-in.
      const auto fitted = fit_method(m, rows.X, a.dim, a.fit);
      p = decode_projection(encode_projection(fitted));
      p.warnings = fitted.warnings;
      result = project_set(set, p, tag);
    }
  }
  for (const auto& w : p.warnings) io.err << "warning: " << w << '\n';
  write_embeddings(result, a.out);
  if (!a.projection_out.empty()) save_projection(p, a.projection_out);
  io.note("compressed " + std::to_string(set.dim) + " -> " + std::to_string(result.dim) + " (" +
          std::string(method_name(p.method)) + ")");
  return kExitOk;
}

struct GapArgs {
  std::string in, compressed, methods = "pca,mds,lle,isomap,tsne2d", out;
  int dim = 16;
  int max_rows = 500;
  FitOptions fit;
};

int cmd_gap(const GapArgs& a, const Io& io) {
  const auto set = read_embeddings(a.in);
  json j;
  j["rows"] = json::array();
  if (!a.compressed.empty()) {
    const auto other = read_embeddings(a.compressed);
    if (other.problems.size() != set.problems.size() || other.token_count() != set.token_count()) {
      fail(ErrorKind::Alignment, "compressed file does not match the original's problems and tokens");
    }
    const auto rows = sample_rows(set, a.max_rows, a.fit.seed, false);
    MatrixXd Y(rows.X.rows(), other.dim);
    for (Eigen::Index k = 0; k < Y.rows(); ++k) {
      const auto& m = other.problems[rows.problem[static_cast<std::size_t>(k)]].matrix;
      Y.row(k) = m.row(static_cast<Eigen::Index>(rows.token[static_cast<std::size_t>(k)])).cast<double>();
    }
    j["rows"].push_back({{"method", other.source_tag}, {"dim", other.dim}, {"gap", self_similarity_gap(rows.X, Y)}});
  } else {
    const auto rows = sample_rows(set, a.max_rows, a.fit.seed, true);
    for (const auto& name : split_commas(a.methods)) {
      const Method m = method_arg(name);
      const int k = m == Method::TSNE2D ? 2 : a.dim;
      const auto p = fit_method(m, rows.X, k, a.fit);
      const double gap = self_similarity_gap(rows.X, fitted_output(p, rows.X));
      j["rows"].push_back({{"method", std::string(method_name(m))}, {"dim", k}, {"gap", gap}});
      io.note(std::string(method_name(m)) + " gap " + std::to_string(gap));
    }
  }
  j["reference_rows"] = json::array();
  for (const auto& r : gap_reference_rows()) {
    j["reference_rows"].push_back({{"label", r.label}, {"value", r.value}, {"citation", r.citation}, {"reference", true}});
  }
  write_text(a.out, j.dump(2) + "\n", io.out);
  return kExitOk;
}

struct DistillArgs {
  std::string stage1, stage2, compressor, out, log, checkpoint;
  StudentConfig student;
  DistillConfig cfg;
  bool no_mask_special = false;
};

int cmd_distill(DistillArgs a, const Io& io) {
  a.cfg.stage1_path = a.stage1;
  a.cfg.stage2_path = a.stage2;
  a.cfg.stage1_checkpoint = a.checkpoint;
  a.cfg.mask_special = !a.no_mask_special;
  a.cfg.threads = io.g.threads;
  a.cfg.seed = a.student.seed;
  if (!a.compressor.empty()) a.cfg.compressor = load_projection(a.compressor);
  const auto header = read_embeddings(a.stage1);
  a.student.vocab_size = header.vocab_size;
  StudentParams init = init_student(a.student);
  const auto res = train_distill(std::move(init), a.cfg);
  for (std::size_t s = 0; s < res.stages.size(); ++s) {
    const auto& st = res.stages[s];
    io.note("stage " + std::to_string(s + 1) + " (" + st.source_tag + "): loss " + std::to_string(st.initial_loss) +
            " -> " + std::to_string(st.final_loss) + " in " + std::to_string(st.steps) + " steps");
  }
  save_student(res.student, a.out);
  if (!a.log.empty()) atomic_write(a.log, log_to_jsonl(res.log));
  return kExitOk;
}

struct EncoderArgs {
  std::string vectors, student, projection;
};

// Owns whatever the encoder stack points at.
struct LoadedEncoder {
  EmbeddingSet vectors;
  StudentParams student;
  Projection projection;
  EncoderStack stack;
};

void add_encoder_options(CLI::App* sc, EncoderArgs& e) {
  sc->add_option("--vectors", e.vectors, "EMB1 token vectors for the records");
  sc->add_option("--student", e.student, "STU1 student used as the encoder");
}

std::unique_ptr<LoadedEncoder> load_encoder(const EncoderArgs& e, const std::vector<MwpRecord>& records,
                                            bool train_student, const Globals& g) {
  if (e.vectors.empty() == e.student.empty()) fail(ErrorKind::Param, "give exactly one of --vectors or --student");
  auto enc = std::make_unique<LoadedEncoder>();
  if (!e.vectors.empty()) {
    enc->vectors = read_embeddings(e.vectors);
    enc->stack.vectors = &enc->vectors;
  } else {
    enc->student = load_student(e.student);
    if (train_student) {
      enc->stack.student = &enc->student;
      enc->stack.train_student = true;
    } else {
      enc->vectors = student_embeddings(enc->student, records, "student", g.precision == 32);
      enc->stack.vectors = &enc->vectors;
    }
  }
  return enc;
}

std::vector<MwpRecord> union_records(const std::vector<MwpRecord>& a, const std::vector<MwpRecord>& b) {
  std::vector<MwpRecord> all = a;
  std::set<std::string> ids;
  for (const auto& r : a) ids.insert(r.id);
  for (const auto& r : b)
    if (ids.insert(r.id).second) all.push_back(r);
  return all;
}

struct TrainHeadArgs {
  std::string task, data, eval_data, split, out, joint_out, student_out, report;
  EncoderArgs enc;
  bool train_student = false;
  int joint_dim = 0;
  std::uint64_t seed = 0;
  DecoderConfig d;
  std::string constants = "C:1,C:2,C:3.14";
};

int cmd_train_head(TrainHeadArgs a, const Io& io) {
  finish_decoder(a.d, a.constants);
  a.d.task = head_task_arg(a.task);
  a.d.seed = a.seed;
  auto [train, eval] = train_eval(a.data, a.eval_data, a.split);
  auto enc = load_encoder(a.enc, union_records(train, eval), a.train_student, io.g);
  if (a.joint_dim > 0) {
    enc->projection = random_linear(enc->stack.output_dim(), a.joint_dim, a.seed);
    enc->stack.joint = &enc->projection;
  }
  a.d.on_epoch = [&](int epoch, double loss, const TaskScores& s) {
    std::string line = "epoch " + std::to_string(epoch) + " loss " + std::to_string(loss) + " acc " +
                       std::to_string(s.accuracy);
    if (a.d.task == Task::EQUATION) line += " answer " + std::to_string(s.answer_accuracy);
    io.note(line);
  };
  const auto res = train_decoder(enc->stack, train, eval, a.d);
  save_head(res.head, a.out);
  if (enc->stack.joint != nullptr) {
    if (a.joint_out.empty()) io.err << "warning: the joint compressor was trained but --joint-out was not given\n";
    else save_projection(*enc->stack.joint, a.joint_out);
  }
  if (a.train_student) {
    if (a.student_out.empty()) io.err << "warning: the student was trained but --student-out was not given\n";
    else save_student(enc->student, a.student_out);
  }
  json j;
  j["task"] = std::string(task_name(a.d.task));
  j["initial"] = scores_json(res.initial, a.d.task);
  j["final"] = scores_json(res.final_scores, a.d.task);
  j["initial_loss"] = res.initial_loss;
  j["epoch_loss"] = res.epoch_loss;
  j["epochs"] = res.epochs_run;
  json curve = json::array();
  for (const auto& s : res.curve) curve.push_back(scores_json(s, a.d.task));
  j["curve"] = curve;
  write_text(a.report, j.dump(2) + "\n", io.out);
  return kExitOk;
}

struct EvalArgs {
  std::string head, data, predictions, out;
  EncoderArgs enc;
  int max_depth = 8;
};

int cmd_eval(const EvalArgs& a, const Io& io) {
  const auto head = load_head(a.head);
  const auto records = records_for(a.data);
  auto enc = load_encoder(a.enc, records, false, io.g);
  const EmbeddingSet* vectors = enc->stack.vectors;
  if (!a.enc.projection.empty()) {
    enc->projection = load_projection(a.enc.projection);
    enc->vectors = project_set(*vectors, enc->projection, vectors->source_tag);
    vectors = &enc->vectors;
  }
  if (static_cast<int>(vectors->dim) != head.dim) {
    fail(ErrorKind::DimMismatch, "head expects width " + std::to_string(head.dim) + ", vectors have " +
                                     std::to_string(vectors->dim));
  }
  const auto index = align(*vectors, records);
  std::vector<Prediction> preds;
  PredictOptions po;
  po.max_depth = a.max_depth;
  for (std::size_t i = 0; i < records.size(); ++i) {
    preds.push_back(predict(head, vectors->problems[index[i]].matrix.cast<double>(), records[i], po));
  }
  if (!a.predictions.empty()) atomic_write(a.predictions, predictions_to_jsonl(preds));
  json j;
  j["task"] = std::string(task_name(head.task));
  j["records"] = records.size();
  auto add = [&](ReportTask t, json& into) {
    const auto m = compute_metrics(t, preds, records);
    into["accuracy"] = m.accuracy;
    into["count"] = m.count;
    if (t == ReportTask::RELATION) {
      into["precision"] = m.precision;
      into["recall"] = m.recall;
      into["confusion"] = {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}};
    }
  };
  if (head.task == Task::EQUATION) {
    json eq, ans;
    add(ReportTask::EQUATION, eq);
    add(ReportTask::ANSWER, ans);
    j["equation"] = eq;
    j["answer"] = ans;
  } else {
    add(head.task == Task::RELATION ? ReportTask::RELATION : ReportTask::POS, j);
  }
  write_text(a.out, j.dump(2) + "\n", io.out);
  return kExitOk;
}

ReportFormat format_arg(const std::string& s) {
  const auto f = parse_report_format(s);
  if (!f) fail(ErrorKind::Param, "unknown format " + s + " (json, csv, md)");
  return *f;
}

struct SweepArgs {
  std::string vectors, data, eval_data, split, methods = "pca", dims = "64,128,256", tasks = "relation",
                                                 format = "json", out;
  SweepConfig cfg;
  DecoderConfig d;
  std::string constants = "C:1,C:2,C:3.14";
};

int cmd_sweep(SweepArgs a, const Io& io) {
  finish_decoder(a.d, a.constants);
  for (const auto& m : split_commas(a.methods)) a.cfg.methods.push_back(method_arg(m));
  a.cfg.dims = parse_ints(a.dims, "--dims");
  a.cfg.tasks = tasks_arg(a.tasks);
  a.cfg.decoder = a.d;
  a.cfg.threads = io.g.threads;
  const auto fmt = format_arg(a.format);
  const auto [train, eval] = train_eval(a.data, a.eval_data, a.split);
  const auto vectors = read_embeddings(a.vectors);
  const auto reports = run_compression_sweep(a.cfg, vectors, train, eval);
  for (const auto& r : reports) {
    io.note(std::string(report_task_name(r.task)) + " " + r.method + " dim " + std::to_string(r.dim) + ": " +
            std::to_string(r.initial_accuracy) + " -> " + std::to_string(r.final_accuracy));
  }
  write_text(a.out, render_report(reports, fmt), io.out);
  return kExitOk;
}

struct CompareArgs {
  std::string distilled, undistilled, data, eval_data, split, tasks = "equation,answer", format = "json", out;
  CompareConfig cfg;
  std::uint64_t seed = 0;
  DecoderConfig d;
  std::string constants = "C:1,C:2,C:3.14";
};

int cmd_compare(CompareArgs a, const Io& io) {
  finish_decoder(a.d, a.constants);
  a.d.seed = a.seed;
  a.cfg.decoder = a.d;
  a.cfg.tasks = tasks_arg(a.tasks);
  a.cfg.single = io.g.precision == 32;
  const auto fmt = format_arg(a.format);
  const auto distilled = load_student(a.distilled);
  // The control arm defaults to the distilled student's own starting point.
  const auto undistilled = a.undistilled.empty() ? init_student(distilled.cfg) : load_student(a.undistilled);
  const auto [train, eval] = train_eval(a.data, a.eval_data, a.split);
  const auto reports = run_distillation_comparison(a.cfg, distilled, undistilled, train, eval);
  for (const auto& r : reports) {
    io.note(std::string(report_task_name(r.task)) + (r.distilled ? " distilled: " : " undistilled: ") +
            std::to_string(r.initial_accuracy) + " -> " + std::to_string(r.final_accuracy));
  }
  write_text(a.out, render_report(reports, fmt), io.out);
  return kExitOk;
}

struct TsneArgs {
  std::string in, out;
  int max_rows = 1000;
  bool pooled = false;
  FitOptions fit;
};

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

int cmd_tsne(const TsneArgs& a, const Io& io) {
  const auto set = read_embeddings(a.in);
  std::string csv = "id,token_index,token,x,y\r\n";
  if (a.pooled) {
    const auto p = fit_method(Method::TSNE2D, set.pooled(), 2, a.fit);
    for (std::size_t i = 0; i < set.problems.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      csv += csv_quote(set.problems[i].id) + ",,," + std::to_string(p.fitted_embedding(r, 0)) + "," +
             std::to_string(p.fitted_embedding(r, 1)) + "\r\n";
    }
  } else {
    const auto rows = sample_rows(set, a.max_rows, a.fit.seed, false);
    const auto p = fit_method(Method::TSNE2D, rows.X, 2, a.fit);
    for (std::size_t k = 0; k < rows.problem.size(); ++k) {
      const auto& pe = set.problems[rows.problem[k]];
      const auto r = static_cast<Eigen::Index>(k);
      const std::string token = rows.token[k] < pe.tokens.size() ? pe.tokens[rows.token[k]] : "";
      csv += csv_quote(pe.id) + "," + std::to_string(rows.token[k]) + "," + csv_quote(token) + "," +
             std::to_string(p.fitted_embedding(r, 0)) + "," + std::to_string(p.fitted_embedding(r, 1)) + "\r\n";
    }
  }
  write_text(a.out, csv, io.out);
  return kExitOk;
}

struct InspectArgs {
  std::string in;
};

int cmd_inspect(const InspectArgs& a, const Io& io) {
  const auto bytes = read_file(a.in);
  const std::string magic = bytes.substr(0, 4);
  json j;
  j["path"] = a.in;
  if (magic == "EMB1") {
    const auto h = read_emb1_header(a.in);
    j["format"] = "EMB1";
    j["version"] = h.version;
    j["dim"] = h.dim;
    j["problem_count"] = h.problem_count;
    std::int64_t tokens = 0;
    for (auto n : h.seq_lens) tokens += n;
    j["token_count"] = tokens;
    if (std::filesystem::exists(sidecar_path(a.in))) {
      const auto set = read_embeddings(a.in);
      j["vocab_size"] = set.vocab_size;
      j["source_tag"] = set.source_tag;
    }
  } else if (magic == "STU1") {
    const auto s = decode_student(bytes);
    j["format"] = "STU1";
    j["vocab_size"] = s.cfg.vocab_size;
    j["d_model"] = s.cfg.d_model;
    j["n_layers"] = s.cfg.n_layers;
    j["n_heads"] = s.cfg.n_heads;
    j["d_ff"] = s.cfg.d_ff;
    j["max_len"] = s.cfg.max_len;
    j["seed"] = s.cfg.seed;
    j["parameters"] = trainable_parameter_count(s);
    j["checksum"] = hex64(param_checksum(s));
  } else if (magic == "PRJ1") {
    const auto p = decode_projection(bytes);
    j["format"] = "PRJ1";
    j["method"] = std::string(method_name(p.method));
    j["in_dim"] = p.in_dim;
    j["out_dim"] = p.out_dim;
    j["fitted_points"] = p.fitted_points.rows();
  } else if (magic == "HDR1") {
    const auto h = decode_head(bytes);
    j["format"] = "HDR1";
    j["task"] = std::string(task_name(h.task));
    j["dim"] = h.dim;
    if (h.task == Task::EQUATION) j["constants"] = h.tree.constants;
  } else {
    const auto records = parse_dataset(bytes);
    j["format"] = "JSONL";
    j["records"] = records.size();
  }
  io.out << j.dump(2) << '\n';
  return kExitOk;
}

struct AttributionArgs {
  std::string in, data, out;
  int top = kTokenCategoryCount;
};

int cmd_attribution(const AttributionArgs& a, const Io& io) {
  const auto set = read_embeddings(a.in);
  const auto rows = top_token_attribution(set, records_for(a.data), a.top);
  json j = json::array();
  for (const auto& r : rows) j.push_back({{"category", std::string(category_name(r.category))}, {"count", r.count}});
  write_text(a.out, j.dump(2) + "\n", io.out);
  return kExitOk;
}

int run_parsed(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Embedding compression, distillation and decoder evaluation for math word problems", "mwpkd"};
  app.set_version_flag("--version", std::string(MWPKD_VERSION));
  app.set_config("--config", "", "Config file (key = value, [subcommand] sections); flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "Forward-pass arithmetic for evaluation (32 or 64)")
      ->check(CLI::IsMember({32, 64}))
      ->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress lines");

  std::vector<std::pair<CLI::App*, std::function<int(const Io&)>>> commands;

  SynthArgs synth;
  {
    auto* sc = app.add_subcommand("synth", "Generate a synthetic dataset (JSONL)");
    sc->add_option("--n", synth.n, "Record count")->required();
    sc->add_option("--seed", synth.seed, "Seed")->capture_default_str();
    sc->add_option("--mix", synth.mix, "Comma-separated template weights");
    sc->add_option("--out", synth.out, "Output JSONL (- for stdout)")->required();
    commands.emplace_back(sc, [&](const Io& io) { return cmd_synth(synth, io); });
  }
  ToyArgs toy;
  {
    auto* sc = app.add_subcommand("toy-teacher", "Write stand-in teacher vectors for a dataset");
    sc->add_option("--data", toy.data, "Dataset JSONL")->required();
    sc->add_option("--dim", toy.dim, "Vector width")->capture_default_str();
    sc->add_option("--vocab-size", toy.vocab_size, "Vocabulary size (default: inferred)");
    sc->add_option("--seed", toy.seed, "Seed")->capture_default_str();
    sc->add_option("--positional-scale", toy.positional_scale, "Weight of the per-position vector")->capture_default_str();
    sc->add_option("--source-tag", toy.source_tag, "Source tag")->capture_default_str();
    sc->add_option("--out", toy.out, "Output EMB1")->required();
    commands.emplace_back(sc, [&](const Io& io) { return cmd_toy(toy, io); });
  }
  StatsArgs stats;
  {
    auto* sc = app.add_subcommand("stats", "Per-dimension distribution statistics");
    sc->add_option("--in", stats.in, "EMB1 file")->required();
    sc->add_option("--out", stats.out, "Output JSON (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_stats(stats, io); });
  }
  auto add_fit = [](CLI::App* sc, FitOptions& f) {
    sc->add_option("--neighbors", f.neighbors, "Neighbourhood size")->capture_default_str();
    sc->add_option("--perplexity", f.perplexity, "t-SNE perplexity")->capture_default_str();
    sc->add_option("--iters", f.iters, "t-SNE iterations")->capture_default_str();
    sc->add_flag("--standardize", f.standardize, "PCA on standardized dimensions");
    sc->add_option("--criterion", f.criterion, "Pruning criterion (variance, absmean)")->capture_default_str();
    sc->add_option("--seed", f.seed, "Seed")->capture_default_str();
  };
  CompressArgs comp;
  {
    auto* sc = app.add_subcommand("compress", "Fit or apply a compressor to token vectors");
    sc->add_option("--in", comp.in, "EMB1 input")->required();
    sc->add_option("--out", comp.out, "EMB1 output")->required();
    sc->add_option("--method", comp.method, "linear, pca, mds, lle, isomap, tsne2d, prune");
    sc->add_option("--dim", comp.dim, "Target width");
    sc->add_option("--fit-rows", comp.fit_rows, "Rows sampled to fit mds/lle/isomap (0 = all)")->capture_default_str();
    sc->add_option("--projection-in", comp.projection_in, "Apply this PRJ1 instead of fitting");
    sc->add_option("--projection-out", comp.projection_out, "Save the fitted PRJ1");
    sc->add_option("--source-tag", comp.source_tag, "Source tag of the output (default: input's)");
    add_fit(sc, comp.fit);
    commands.emplace_back(sc, [&](const Io& io) { return cmd_compress(comp, io); });
  }
  CompressArgs prune;
  {
    auto* sc = app.add_subcommand("prune", "Keep the highest-scoring dimensions");
    sc->add_option("--in", prune.in, "EMB1 input")->required();
    sc->add_option("--out", prune.out, "EMB1 output")->required();
    sc->add_option("--dim", prune.dim, "Dimensions kept")->required();
    sc->add_option("--criterion", prune.fit.criterion, "variance or absmean")->capture_default_str();
    sc->add_option("--projection-out", prune.projection_out, "Save the PRJ1");
    commands.emplace_back(sc, [&](const Io& io) {
      prune.method = "prune";
      return cmd_compress(prune, io);
    });
  }
  GapArgs gap;
  {
    auto* sc = app.add_subcommand("gap", "Self-similarity gap between original and reduced vectors");
    sc->add_option("--in", gap.in, "EMB1 original")->required();
    sc->add_option("--compressed", gap.compressed, "EMB1 reduced version of --in");
    sc->add_option("--methods", gap.methods, "Methods to fit when --compressed is absent")->capture_default_str();
    sc->add_option("--dim", gap.dim, "Target width for fitted methods")->capture_default_str();
    sc->add_option("--max-rows", gap.max_rows, "Token rows sampled")->capture_default_str();
    sc->add_option("--out", gap.out, "Output JSON (default stdout)");
    add_fit(sc, gap.fit);
    commands.emplace_back(sc, [&](const Io& io) { return cmd_gap(gap, io); });
  }
  DistillArgs dist;
  {
    auto* sc = app.add_subcommand("distill", "Two-stage distillation of a student from teacher vectors");
    sc->add_option("--stage1", dist.stage1, "EMB1 stage-1 teacher vectors")->required();
    sc->add_option("--stage2", dist.stage2, "EMB1 stage-2 teacher vectors");
    sc->add_option("--compressor", dist.compressor, "PRJ1 applied to teacher vectors");
    sc->add_option("--out", dist.out, "STU1 output")->required();
    sc->add_option("--log", dist.log, "Training log JSONL");
    sc->add_option("--checkpoint", dist.checkpoint, "STU1 written at the stage boundary");
    sc->add_option("--d-model", dist.student.d_model)->capture_default_str();
    sc->add_option("--layers", dist.student.n_layers)->capture_default_str();
    sc->add_option("--heads", dist.student.n_heads)->capture_default_str();
    sc->add_option("--d-ff", dist.student.d_ff)->capture_default_str();
    sc->add_option("--max-len", dist.student.max_len)->capture_default_str();
    sc->add_option("--dropout", dist.student.dropout_rate)->capture_default_str();
    sc->add_option("--seed", dist.student.seed)->capture_default_str();
    sc->add_option("--steps1", dist.cfg.stage1_steps)->capture_default_str();
    sc->add_option("--steps2", dist.cfg.stage2_steps)->capture_default_str();
    sc->add_option("--batch-size", dist.cfg.batch_size)->capture_default_str();
    sc->add_option("--lr", dist.cfg.adam.learning_rate)->capture_default_str();
    sc->add_option("--temperature", dist.cfg.temperature)->capture_default_str();
    sc->add_option("--clip", dist.cfg.clip_norm)->capture_default_str();
    sc->add_flag("--no-mask-special", dist.no_mask_special, "Include special tokens in the loss");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_distill(dist, io); });
  }
  TrainHeadArgs th;
  {
    auto* sc = app.add_subcommand("train-head", "Train a relation, equation or POS head");
    sc->add_option("--task", th.task, "RELATION, EQUATION or POS")->required();
    sc->add_option("--data", th.data, "Training JSONL")->required();
    sc->add_option("--eval-data", th.eval_data, "Evaluation JSONL");
    sc->add_option("--split", th.split, "train,dev,test fractions of --data (evaluates on test)");
    add_encoder_options(sc, th.enc);
    sc->add_flag("--train-student", th.train_student, "Update the student with the head");
    sc->add_option("--joint-dim", th.joint_dim, "Width of a LINEAR compressor trained with the head");
    sc->add_option("--joint-out", th.joint_out, "PRJ1 for the trained joint compressor");
    sc->add_option("--student-out", th.student_out, "STU1 for the trained student");
    sc->add_option("--seed", th.seed)->capture_default_str();
    decoder_options(sc, th.d, th.constants);
    sc->add_option("--out", th.out, "HDR1 output")->required();
    sc->add_option("--report", th.report, "Training summary JSON (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_train_head(th, io); });
  }
  EvalArgs ev;
  {
    auto* sc = app.add_subcommand("eval", "Score a trained head");
    sc->add_option("--head", ev.head, "HDR1 head")->required();
    sc->add_option("--data", ev.data, "Dataset JSONL")->required();
    add_encoder_options(sc, ev.enc);
    sc->add_option("--projection", ev.enc.projection, "PRJ1 applied to the encoder output");
    sc->add_option("--max-depth", ev.max_depth)->capture_default_str();
    sc->add_option("--predictions", ev.predictions, "Predictions JSONL");
    sc->add_option("--out", ev.out, "Metrics JSON (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_eval(ev, io); });
  }
  SweepArgs sw;
  {
    auto* sc = app.add_subcommand("sweep", "Compression grid: methods x dims x tasks");
    sc->add_option("--vectors", sw.vectors, "EMB1 encoder vectors")->required();
    sc->add_option("--data", sw.data, "Dataset JSONL")->required();
    sc->add_option("--eval-data", sw.eval_data, "Evaluation JSONL");
    sc->add_option("--split", sw.split, "train,dev,test fractions of --data (evaluates on test)");
    sc->add_option("--methods", sw.methods)->capture_default_str();
    sc->add_option("--dims", sw.dims)->capture_default_str();
    sc->add_option("--tasks", sw.tasks, "relation, equation, answer, pos")->capture_default_str();
    sc->add_option("--seed", sw.cfg.seed)->capture_default_str();
    sc->add_option("--neighbors", sw.cfg.neighbors)->capture_default_str();
    sc->add_option("--fit-rows", sw.cfg.fit_rows)->capture_default_str();
    sc->add_flag("--include-uncompressed", sw.cfg.include_uncompressed, "Add uncompressed baseline cells");
    sc->add_flag("--timing", sw.cfg.timing, "Record wall time (reports are then not byte-stable)");
    decoder_options(sc, sw.d, sw.constants);
    sc->add_option("--format", sw.format, "json, csv or md")->capture_default_str();
    sc->add_option("--out", sw.out, "Report path (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_sweep(sw, io); });
  }
  CompareArgs cmp;
  {
    auto* sc = app.add_subcommand("compare-distill", "Distilled vs undistilled student under identical heads");
    sc->add_option("--distilled", cmp.distilled, "STU1 distilled student")->required();
    sc->add_option("--undistilled", cmp.undistilled, "STU1 control (default: the distilled config's initialization)");
    sc->add_option("--data", cmp.data, "Dataset JSONL")->required();
    sc->add_option("--eval-data", cmp.eval_data, "Evaluation JSONL");
    sc->add_option("--split", cmp.split, "train,dev,test fractions of --data (evaluates on test)");
    sc->add_option("--tasks", cmp.tasks)->capture_default_str();
    sc->add_flag("--train-student", cmp.cfg.train_student, "Fine-tune each student with its head");
    sc->add_flag("--timing", cmp.cfg.timing, "Record wall time");
    sc->add_option("--seed", cmp.seed)->capture_default_str();
    decoder_options(sc, cmp.d, cmp.constants);
    sc->add_option("--format", cmp.format, "json, csv or md")->capture_default_str();
    sc->add_option("--out", cmp.out, "Report path (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_compare(cmp, io); });
  }
  TsneArgs ts;
  {
    auto* sc = app.add_subcommand("tsne2d", "2-D t-SNE coordinates as CSV");
    sc->add_option("--in", ts.in, "EMB1 input")->required();
    sc->add_option("--max-rows", ts.max_rows, "Token rows sampled")->capture_default_str();
    sc->add_flag("--pooled", ts.pooled, "One mean vector per problem");
    sc->add_option("--perplexity", ts.fit.perplexity)->capture_default_str();
    sc->add_option("--iters", ts.fit.iters)->capture_default_str();
    sc->add_option("--seed", ts.fit.seed)->capture_default_str();
    sc->add_option("--out", ts.out, "CSV output (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_tsne(ts, io); });
  }
  InspectArgs ins;
  {
    auto* sc = app.add_subcommand("inspect", "Print the header of an EMB1, STU1, PRJ1, HDR1 or JSONL file");
    sc->add_option("--in", ins.in, "File")->required();
    commands.emplace_back(sc, [&](const Io& io) { return cmd_inspect(ins, io); });
  }
  AttributionArgs att;
  {
    auto* sc = app.add_subcommand("attribution", "Token categories holding each dimension's largest value");
    sc->add_option("--in", att.in, "EMB1 vectors")->required();
    sc->add_option("--data", att.data, "Dataset JSONL")->required();
    sc->add_option("--top", att.top, "Rows kept")->capture_default_str();
    sc->add_option("--out", att.out, "Output JSON (default stdout)");
    commands.emplace_back(sc, [&](const Io& io) { return cmd_attribution(att, io); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const Io io{out, err, g};
  try {
    for (auto& [sc, fn] : commands)
      if (sc->parsed()) return fn(io);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return is_numerical(e.kind()) ? kExitNumerical : kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("mwpkd");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_parsed(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run_command(int argc, char** argv) { return run_parsed(argc, argv, std::cout, std::cerr); }

}  // namespace mwpkd::cli
