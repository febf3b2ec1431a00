#include "mwpkd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

using Eigen::MatrixXd;
using json = nlohmann::ordered_json;

std::string_view report_task_name(ReportTask t) {
  switch (t) {
    case ReportTask::RELATION: return "RELATION";
    case ReportTask::EQUATION: return "EQUATION";
    case ReportTask::ANSWER: return "ANSWER";
    case ReportTask::POS: return "POS";
  }
  return "?";
}

std::optional<ReportTask> parse_report_task(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (auto t : {ReportTask::RELATION, ReportTask::EQUATION, ReportTask::ANSWER, ReportTask::POS})
    if (report_task_name(t) == upper) return t;
  return std::nullopt;
}

Task head_task(ReportTask t) {
  switch (t) {
    case ReportTask::RELATION: return Task::RELATION;
    case ReportTask::POS: return Task::POS;
    default: return Task::EQUATION;
  }
}

TaskMetrics relation_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
  TaskMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  m.count = tp + fp + fn + tn;
  if (m.count > 0) m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(m.count);
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return m;
}

namespace {

std::vector<std::string> split_spaces(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto j = s.find(' ', i);
    const auto end = j == std::string::npos ? s.size() : j;
    if (end > i) out.push_back(s.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

}  // namespace

TaskMetrics compute_metrics(ReportTask task, const std::vector<Prediction>& predictions,
                            const std::vector<MwpRecord>& gold) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p).second) fail(ErrorKind::Alignment, "duplicate prediction id " + p.id);
  }
  if (by_id.size() != gold.size()) {
    fail(ErrorKind::Alignment, std::to_string(predictions.size()) + " predictions for " +
                                   std::to_string(gold.size()) + " gold records");
  }
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0, hits = 0, count = 0;
  for (const auto& r : gold) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) fail(ErrorKind::Alignment, "no prediction for id " + r.id);
    const Prediction& p = *it->second;
    switch (task) {
      case ReportTask::RELATION: {
        const bool pos = p.score >= 0.5;
        if (pos && r.relation_label == 1) ++tp;
        if (pos && r.relation_label == 0) ++fp;
        if (!pos && r.relation_label == 1) ++fn;
        if (!pos && r.relation_label == 0) ++tn;
        break;
      }
      case ReportTask::EQUATION:
        hits += split_spaces(p.prediction) == r.equation_prefix ? 1 : 0;
        ++count;
        break;
      case ReportTask::ANSWER:
        hits += p.answer_valid && answer_matches(p.score, r.answer) ? 1 : 0;
        ++count;
        break;
      case ReportTask::POS: {
        const auto tags = split_spaces(p.prediction);
        if (tags.size() != r.pos_tags.size()) {
          fail(ErrorKind::Alignment, "prediction for " + r.id + " has " + std::to_string(tags.size()) +
                                         " tags, gold has " + std::to_string(r.pos_tags.size()));
        }
        for (std::size_t i = 0; i < tags.size(); ++i) hits += tags[i] == pos_name(r.pos_tags[i]) ? 1 : 0;
        count += static_cast<std::int64_t>(tags.size());
        break;
      }
    }
  }
  if (task == ReportTask::RELATION) return relation_metrics(tp, fp, fn, tn);
  TaskMetrics m;
  m.count = count;
  if (count > 0) m.accuracy = static_cast<double>(hits) / static_cast<double>(count);
  return m;
}

// ---- reference data ----

namespace {

const char* kSweepCitation = "published result (teacher vectors, accuracy vs. compressed dimension)";
const char* kRelationCitation = "published result (relation extraction, final accuracy)";
const char* kDistillCitation = "published result (distilled vs. undistilled student)";
const char* kGapCitation = "published result (self-similarity gap by reduction method)";

}  // namespace

std::vector<ReferenceRow> sweep_reference_rows(ReportTask task) {
  std::vector<ReferenceRow> rows;
  const int dims[] = {768, 256, 128, 64};
  if (task == ReportTask::EQUATION || task == ReportTask::ANSWER) {
    const double eq[] = {0.2776, 0.2104, 0.1293, 0.0752};
    const double ans[] = {0.3327, 0.2375, 0.1433, 0.0852};
    const auto* v = task == ReportTask::EQUATION ? eq : ans;
    const std::string what = task == ReportTask::EQUATION ? "equation" : "answer";
    for (int i = 0; i < 4; ++i) {
      rows.push_back({what + " accuracy, dim " + std::to_string(dims[i]), v[i], kSweepCitation, true});
    }
  } else if (task == ReportTask::RELATION) {
    rows.push_back({"relation accuracy, dim 768 (uncompressed)", 0.9325, kRelationCitation, true});
    rows.push_back({"relation accuracy, dim 256 (PCA)", 0.9341, kRelationCitation, true});
  }
  return rows;
}

std::vector<ReferenceRow> distill_reference_rows(ReportTask task) {
  std::vector<ReferenceRow> rows;
  if (task != ReportTask::EQUATION && task != ReportTask::ANSWER) return rows;
  const bool eq = task == ReportTask::EQUATION;
  const std::string what = eq ? "equation" : "answer";
  const double values[] = {eq ? 0.0471 : 0.0521, eq ? 0.0571 : 0.0731, eq ? 0.2695 : 0.3287, eq ? 0.2725 : 0.3337};
  const char* labels[] = {"initial, undistilled", "initial, distilled", "final, undistilled", "final, distilled"};
  for (int i = 0; i < 4; ++i) rows.push_back({what + " accuracy, " + labels[i], values[i], kDistillCitation, true});
  return rows;
}

std::vector<ReferenceRow> gap_reference_rows() {
  return {{"gap, PCA", 0.1349, kGapCitation, true},   {"gap, KPCA", 0.1350, kGapCitation, true},
          {"gap, LLE", 0.1393, kGapCitation, true},   {"gap, MDS", 0.1375, kGapCitation, true},
          {"gap, ISOMAP", 0.2124, kGapCitation, true}, {"gap, t-SNE", 0.2599, kGapCitation, true}};
}

void MetricReport::validate() const {
  auto check = [&](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorKind::Validation, std::string(what) + " " + std::to_string(v) + " outside [0, 1]");
    }
  };
  check(initial_accuracy, "initial_accuracy");
  check(final_accuracy, "final_accuracy");
  for (double v : curve) check(v, "curve point");
  if (static_cast<int>(curve.size()) != epochs) {
    fail(ErrorKind::Validation, "curve has " + std::to_string(curve.size()) + " points for " +
                                    std::to_string(epochs) + " epochs");
  }
  for (const auto& r : reference_rows) {
    if (!r.reference) fail(ErrorKind::Validation, "reference row '" + r.label + "' is not flagged as reference");
  }
}

// ---- encoders ----

EmbeddingSet project_set(const EmbeddingSet& set, const Projection& p, const std::string& source_tag) {
  if (p.in_dim != static_cast<int>(set.dim)) {
    fail(ErrorKind::DimMismatch, "projection expects " + std::to_string(p.in_dim) + " inputs, vectors have " +
                                     std::to_string(set.dim));
  }
  EmbeddingSet out;
  out.dim = static_cast<std::uint32_t>(p.out_dim);
  out.vocab_size = set.vocab_size;
  out.source_tag = source_tag;
  out.problems.reserve(set.problems.size());
  for (const auto& pe : set.problems) {
    ProblemEmbedding q = pe;
    q.matrix = apply_projection(p, pe.matrix.cast<double>()).cast<float>();
    out.problems.push_back(std::move(q));
  }
  return out;
}

EmbeddingSet student_embeddings(const StudentParams& student, const std::vector<MwpRecord>& records,
                                const std::string& source_tag, bool single) {
  EmbeddingSet out;
  out.dim = static_cast<std::uint32_t>(student.cfg.d_model);
  out.vocab_size = student.cfg.vocab_size;
  out.source_tag = source_tag;
  for (const auto& r : records) {
    ProblemEmbedding pe;
    pe.id = r.id;
    pe.tokens = r.tokens;
    pe.token_ids = r.token_ids;
    pe.matrix = single ? RowMatrixF(student_forward<float>(student, r.token_ids))
                       : RowMatrixF(student_forward<double>(student, r.token_ids).cast<float>());
    out.problems.push_back(std::move(pe));
  }
  return out;
}

// ---- grids ----

namespace {

// Runs fn(0..n-1) on up to `threads` workers; rethrows the lowest-index failure.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double pick(const TaskScores& s, ReportTask t) { return t == ReportTask::ANSWER ? s.answer_accuracy : s.accuracy; }

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
}

MetricReport run_cell(ReportTask task, EncoderStack& enc, const std::vector<MwpRecord>& train,
                      const std::vector<MwpRecord>& eval, DecoderConfig dcfg, bool timing) {
  const auto start = std::chrono::steady_clock::now();
  dcfg.task = head_task(task);
  dcfg.eval_every = 1;
  const auto res = train_decoder(enc, train, eval, dcfg);
  MetricReport r;
  r.task = task;
  r.seed = dcfg.seed;
  r.initial_accuracy = pick(res.initial, task);
  r.final_accuracy = pick(res.final_scores, task);
  for (const auto& s : res.curve) r.curve.push_back(pick(s, task));
  r.epochs = res.epochs_run;
  r.wall_ms = timing ? elapsed_ms(start) : 0;
  return r;
}

// Train-set token rows, exact duplicates removed, at most `cap` of them.
MatrixXd fit_sample(const EmbeddingSet& set, const std::vector<MwpRecord>& train, int cap, std::uint64_t seed) {
  const auto index = align(set, train);
  std::set<std::vector<float>> seen;
  std::vector<std::vector<float>> rows;
  for (auto p : index) {
    const auto& m = set.problems[p].matrix;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      std::vector<float> row(m.row(i).data(), m.row(i).data() + m.cols());
      if (seen.insert(row).second) rows.push_back(std::move(row));
    }
  }
  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (cap > 0 && order.size() > static_cast<std::size_t>(cap)) {
    Rng rng(seed);
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(cap));
    std::sort(order.begin(), order.end());
  }
  MatrixXd X(static_cast<Eigen::Index>(order.size()), set.dim);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::uint32_t j = 0; j < set.dim; ++j) X(static_cast<Eigen::Index>(i), j) = rows[order[i]][j];
  return X;
}

}  // namespace

void SweepConfig::validate() const {
  if (methods.empty() && !include_uncompressed) fail(ErrorKind::Param, "sweep has no methods");
  if (!methods.empty() && dims.empty()) fail(ErrorKind::Param, "sweep has no dims");
  if (tasks.empty()) fail(ErrorKind::Param, "sweep has no tasks");
  for (auto m : methods)
    if (m == Method::TSNE2D) fail(ErrorKind::Param, "TSNE2D has no out-of-sample map and cannot feed a decoder");
  for (int d : dims)
    if (d < 1) fail(ErrorKind::Param, "sweep dims must be positive");
  if (neighbors < 1) fail(ErrorKind::Param, "neighbors must be positive");
  if (threads < 1) fail(ErrorKind::Param, "threads must be positive");
}

std::vector<MetricReport> run_compression_sweep(const SweepConfig& cfg, const EmbeddingSet& encoder,
                                                const std::vector<MwpRecord>& train,
                                                const std::vector<MwpRecord>& eval) {
  cfg.validate();
  for (int d : cfg.dims) {
    if (d > static_cast<int>(encoder.dim)) {
      fail(ErrorKind::Param, "dim " + std::to_string(d) + " exceeds encoder width " + std::to_string(encoder.dim));
    }
  }
  align(encoder, train);
  align(encoder, eval);

  struct Cell {
    std::size_t fit;  // index into fits, or npos for NONE
    ReportTask task;
  };
  struct Fit {
    Method method;
    int dim;
    std::optional<Projection> projection;
    EmbeddingSet compressed;
  };
  std::vector<Fit> fits;
  std::vector<Cell> cells;
  constexpr auto kNone = static_cast<std::size_t>(-1);
  if (cfg.include_uncompressed)
    for (auto t : cfg.tasks) cells.push_back({kNone, t});
  for (auto m : cfg.methods) {
    for (int d : cfg.dims) {
      fits.push_back({m, d, std::nullopt, {}});
      for (auto t : cfg.tasks) cells.push_back({fits.size() - 1, t});
    }
  }

  std::optional<MatrixXd> all_rows, sample_rows;
  auto train_rows = [&]() -> const MatrixXd& {
    if (!all_rows) all_rows = fit_sample(encoder, train, 0, cfg.seed);
    return *all_rows;
  };
  auto manifold_rows = [&]() -> const MatrixXd& {
    if (!sample_rows) sample_rows = fit_sample(encoder, train, cfg.fit_rows, cfg.seed);
    return *sample_rows;
  };
  if (!fits.empty()) {
    train_rows();
    manifold_rows();
  }
  parallel_for(fits.size(), cfg.threads, [&](std::size_t i) {
    Fit& f = fits[i];
    switch (f.method) {
      case Method::LINEAR: return;  // trained jointly, per cell
      case Method::PCA: f.projection = fit_pca(*all_rows, f.dim); break;
      case Method::PRUNE: f.projection = prune_dims(*all_rows, f.dim); break;
      case Method::MDS: {
        MdsOptions o;
        o.neighbors_k = cfg.neighbors;
        f.projection = fit_classical_mds(*sample_rows, f.dim, o);
        break;
      }
      case Method::LLE: f.projection = fit_lle(*sample_rows, f.dim, cfg.neighbors); break;
      case Method::ISOMAP: f.projection = fit_isomap(*sample_rows, f.dim, cfg.neighbors); break;
      case Method::TSNE2D: break;
    }
    f.compressed = project_set(encoder, *f.projection, encoder.source_tag);
  });

  std::vector<MetricReport> reports(cells.size());
  parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
    const Cell& c = cells[i];
    DecoderConfig dcfg = cfg.decoder;
    dcfg.seed = cfg.seed;
    EncoderStack enc;
    std::optional<Projection> joint;
    std::string method = "NONE";
    int dim = static_cast<int>(encoder.dim);
    if (c.fit == kNone) {
      enc.vectors = &encoder;
    } else {
      const Fit& f = fits[c.fit];
      method = std::string(method_name(f.method));
      dim = f.dim;
      if (f.method == Method::LINEAR) {
        joint = random_linear(static_cast<int>(encoder.dim), f.dim, cfg.seed);
        enc.vectors = &encoder;
        enc.joint = &*joint;
      } else {
        enc.vectors = &f.compressed;
      }
    }
    MetricReport r = run_cell(c.task, enc, train, eval, dcfg, cfg.timing);
    r.method = method;
    r.dim = dim;
    r.reference_rows = sweep_reference_rows(c.task);
    r.validate();
    reports[i] = std::move(r);
  });
  return reports;
}

std::vector<MetricReport> run_distillation_comparison(const CompareConfig& cfg, const StudentParams& distilled,
                                                      const StudentParams& undistilled,
                                                      const std::vector<MwpRecord>& train,
                                                      const std::vector<MwpRecord>& eval) {
  if (!(distilled.cfg.vocab_size == undistilled.cfg.vocab_size && distilled.cfg.d_model == undistilled.cfg.d_model &&
        distilled.cfg.n_layers == undistilled.cfg.n_layers && distilled.cfg.n_heads == undistilled.cfg.n_heads &&
        distilled.cfg.d_ff == undistilled.cfg.d_ff && distilled.cfg.max_len == undistilled.cfg.max_len)) {
    fail(ErrorKind::Config, "distilled and undistilled students have different architectures");
  }
  if (cfg.tasks.empty()) fail(ErrorKind::Param, "comparison has no tasks");
  std::vector<MetricReport> reports;
  for (auto task : cfg.tasks) {
    for (bool is_distilled : {false, true}) {
      const StudentParams& base = is_distilled ? distilled : undistilled;
      EncoderStack enc;
      StudentParams copy;
      // A frozen student is evaluated once; a trainable one is copied per run.
      std::vector<MwpRecord> both;
      EmbeddingSet fixed;
      if (cfg.train_student) {
        copy = base;
        enc.student = &copy;
        enc.train_student = true;
      } else {
        both = train;
        std::set<std::string> ids;
        for (const auto& r : train) ids.insert(r.id);
        for (const auto& r : eval)
          if (ids.insert(r.id).second) both.push_back(r);
        fixed = student_embeddings(base, both, is_distilled ? "distilled" : "undistilled", cfg.single);
        enc.vectors = &fixed;
      }
      MetricReport r = run_cell(task, enc, train, eval, cfg.decoder, cfg.timing);
      r.method = "STUDENT";
      r.dim = base.cfg.d_model;
      r.distilled = is_distilled;
      r.reference_rows = distill_reference_rows(task);
      r.validate();
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

std::vector<SummaryRow> summarize(const std::vector<MetricReport>& reports) {
  std::vector<SummaryRow> rows;
  std::vector<std::vector<double>> values;
  for (const auto& r : reports) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& s) {
      return s.task == r.task && s.method == r.method && s.dim == r.dim && s.distilled == r.distilled;
    });
    std::size_t k = static_cast<std::size_t>(it - rows.begin());
    if (it == rows.end()) {
      rows.push_back({r.task, r.method, r.dim, r.distilled, 0.0, 0});
      values.emplace_back();
    }
    values[k].push_back(r.final_accuracy);
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto& v = values[k];
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    rows[k].median_final = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    rows[k].runs = static_cast<int>(n);
  }
  return rows;
}

// ---- emission ----

std::optional<ReportFormat> parse_report_format(std::string_view name) {
  std::string lower(name);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "json") return ReportFormat::JSON;
  if (lower == "csv") return ReportFormat::CSV;
  if (lower == "md" || lower == "markdown") return ReportFormat::MARKDOWN;
  return std::nullopt;
}

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

json to_json(const MetricReport& r) {
  json j;
  j["task"] = std::string(report_task_name(r.task));
  j["method"] = r.method;
  j["dim"] = r.dim;
  j["distilled"] = r.distilled;
  j["seed"] = r.seed;
  j["initial_accuracy"] = r.initial_accuracy;
  j["final_accuracy"] = r.final_accuracy;
  j["curve"] = r.curve;
  j["epochs"] = r.epochs;
  j["wall_ms"] = r.wall_ms;
  j["reference_rows"] = json::array();
  for (const auto& ref : r.reference_rows) {
    json row;
    row["label"] = ref.label;
    row["value"] = ref.value;
    row["citation"] = ref.citation;
    row["reference"] = ref.reference;
    j["reference_rows"].push_back(row);
  }
  return j;
}

}  // namespace

std::string render_report(const std::vector<MetricReport>& reports, ReportFormat format) {
  for (const auto& r : reports) r.validate();
  switch (format) {
    case ReportFormat::JSON: {
      json j;
      j["reports"] = json::array();
      for (const auto& r : reports) j["reports"].push_back(to_json(r));
      return j.dump(2) + "\n";
    }
    case ReportFormat::CSV: {
      std::string out = "task,method,dim,distilled,seed,initial_acc,final_acc,epochs,wall_ms\r\n";
      for (const auto& r : reports) {
        out += csv_field(std::string(report_task_name(r.task))) + "," + csv_field(r.method) + "," +
               std::to_string(r.dim) + "," + (r.distilled ? "true" : "false") + "," + std::to_string(r.seed) + "," +
               num(r.initial_accuracy) + "," + num(r.final_accuracy) + "," + std::to_string(r.epochs) + "," +
               std::to_string(r.wall_ms) + "\r\n";
      }
      return out;
    }
    case ReportFormat::MARKDOWN: {
      std::string out = "# Report\n";
      for (auto t : {ReportTask::RELATION, ReportTask::EQUATION, ReportTask::ANSWER, ReportTask::POS}) {
        std::vector<const MetricReport*> mine;
        for (const auto& r : reports)
          if (r.task == t) mine.push_back(&r);
        if (mine.empty()) continue;
        out += "\n## " + std::string(report_task_name(t)) + "\n\n";
        out += "| source | method | dim | distilled | seed | initial | final | epochs |\n";
        out += "|---|---|---|---|---|---|---|---|\n";
        for (const auto* r : mine) {
          out += "| computed | " + md_cell(r->method) + " | " + std::to_string(r->dim) + " | " +
                 (r->distilled ? "yes" : "no") + " | " + std::to_string(r->seed) + " | " + num(r->initial_accuracy) +
                 " | " + num(r->final_accuracy) + " | " + std::to_string(r->epochs) + " |\n";
        }
        std::vector<ReferenceRow> refs;
        for (const auto* r : mine)
          for (const auto& ref : r->reference_rows)
            if (std::find(refs.begin(), refs.end(), ref) == refs.end()) refs.push_back(ref);
        if (!refs.empty()) {
          out += "\n| source | label | value | citation |\n|---|---|---|---|\n";
          for (const auto& ref : refs) {
            out += "| published (not reproduced) | " + md_cell(ref.label) + " | " + num(ref.value) + " | " +
                   md_cell(ref.citation) + " |\n";
          }
        }
      }
      return out;
    }
  }
  return {};
}

std::vector<MetricReport> reports_from_json(std::string_view text) {
  std::vector<MetricReport> out;
  try {
    const auto j = json::parse(text);
    for (const auto& e : j.at("reports")) {
      MetricReport r;
      const auto task = parse_report_task(e.at("task").get<std::string>());
      if (!task) fail(ErrorKind::Schema, "unknown report task");
      r.task = *task;
      r.method = e.at("method").get<std::string>();
      r.dim = e.at("dim").get<int>();
      r.distilled = e.at("distilled").get<bool>();
      r.seed = e.at("seed").get<std::uint64_t>();
      r.initial_accuracy = e.at("initial_accuracy").get<double>();
      r.final_accuracy = e.at("final_accuracy").get<double>();
      r.curve = e.at("curve").get<std::vector<double>>();
      r.epochs = e.at("epochs").get<int>();
      r.wall_ms = e.at("wall_ms").get<std::int64_t>();
      for (const auto& row : e.at("reference_rows")) {
        r.reference_rows.push_back({row.at("label").get<std::string>(), row.at("value").get<double>(),
                                    row.at("citation").get<std::string>(), row.at("reference").get<bool>()});
      }
      r.validate();
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Schema, std::string("report JSON: ") + e.what());
  }
  return out;
}

void emit_report(const std::vector<MetricReport>& reports, ReportFormat format, const std::filesystem::path& path) {
  atomic_write(path, render_report(reports, format));
}

}  // namespace mwpkd
