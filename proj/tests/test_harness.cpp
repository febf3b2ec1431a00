#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/harness.hpp"
#include "mwpkd/synth.hpp"
#include "mwpkd/toy.hpp"
#include "test_util.hpp"

namespace mwpkd {
namespace {

std::int64_t vocab() { return static_cast<std::int64_t>(synth_vocab().size()); }

Prediction pred(const std::string& id, const std::string& text, double score = 0.0, bool valid = true) {
  Prediction p;
  p.id = id;
  p.prediction = text;
  p.score = score;
  p.answer_valid = valid;
  return p;
}

MwpRecord gold(const std::string& id, std::vector<std::string> eq, double answer = 0.0, int label = 0) {
  MwpRecord r;
  r.id = id;
  r.equation_prefix = std::move(eq);
  r.answer = answer;
  r.relation_label = label;
  return r;
}

TEST(Metrics, EquationExactMatchFraction) {
  std::vector<MwpRecord> g = {gold("a", {"+", "N0", "N1"}), gold("b", {"N0"}), gold("c", {"*", "N0", "C:2"}),
                              gold("d", {"-", "N1", "N0"})};
  std::vector<Prediction> p = {pred("a", "+ N0 N1"), pred("b", "N0"), pred("c", "* N0 C:2"), pred("d", "- N0 N1")};
  EXPECT_DOUBLE_EQ(compute_metrics(ReportTask::EQUATION, p, g).accuracy, 0.75);
}

TEST(Metrics, AnswerTolerance) {
  std::vector<MwpRecord> g = {gold("a", {}, 8.0), gold("b", {}, 8.0), gold("c", {}, 8.0)};
  std::vector<Prediction> p = {pred("a", "", 7.99997), pred("b", "", 7.99), pred("c", "", 8.0, false)};
  EXPECT_DOUBLE_EQ(compute_metrics(ReportTask::ANSWER, p, g).accuracy, 1.0 / 3.0);
}

TEST(Metrics, RelationConfusionArithmetic) {
  const auto m = relation_metrics(8, 2, 0, 10);
  EXPECT_DOUBLE_EQ(m.precision, 0.8);
  EXPECT_DOUBLE_EQ(m.recall, 1.0);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.9);

  std::vector<MwpRecord> g;
  std::vector<Prediction> p;
  for (int i = 0; i < 20; ++i) {
    const std::string id = "r" + std::to_string(i);
    const int label = i < 8 ? 1 : 0;
    g.push_back(gold(id, {}, 0.0, label));
    p.push_back(pred(id, "", i < 10 ? 0.9 : 0.1));
  }
  const auto c = compute_metrics(ReportTask::RELATION, p, g);
  EXPECT_EQ(c.tp, 8);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.fn, 0);
  EXPECT_EQ(c.tn, 10);
  EXPECT_DOUBLE_EQ(c.precision, 0.8);
}

TEST(Metrics, PosTokenAccuracyAndAlignment) {
  MwpRecord r = gold("a", {});
  r.pos_tags = {PosTag::NOUN, PosTag::VERB, PosTag::NUM, PosTag::PUNCT};
  EXPECT_DOUBLE_EQ(compute_metrics(ReportTask::POS, {pred("a", "NOUN VERB ADJ PUNCT")}, {r}).accuracy, 0.75);
  EXPECT_THROW_KIND(compute_metrics(ReportTask::POS, {pred("b", "NOUN")}, {r}), ErrorKind::Alignment);
  EXPECT_THROW_KIND(compute_metrics(ReportTask::POS, {pred("a", "NOUN")}, {r}), ErrorKind::Alignment);
  EXPECT_THROW_KIND(compute_metrics(ReportTask::POS, {}, {r}), ErrorKind::Alignment);
}

struct SweepFixture {
  std::vector<MwpRecord> train, eval;
  EmbeddingSet teacher;
  SweepFixture() {
    const auto all = synth_generate(40, 3, uniform_mix());
    train.assign(all.begin(), all.begin() + 30);
    eval.assign(all.begin() + 30, all.end());
    teacher = toy_teacher(all, 12, vocab(), 4, 0.2);
  }
};

SweepConfig small_sweep() {
  SweepConfig cfg;
  cfg.methods = {Method::PCA, Method::MDS, Method::LLE};
  cfg.dims = {2, 4, 8};
  cfg.tasks = {ReportTask::RELATION};
  cfg.decoder.epochs = 2;
  cfg.neighbors = 6;
  cfg.fit_rows = 120;
  cfg.seed = 9;
  return cfg;
}

TEST(Sweep, GridCountOrderAndReferences) {
  const SweepFixture f;
  const auto reports = run_compression_sweep(small_sweep(), f.teacher, f.train, f.eval);
  ASSERT_EQ(reports.size(), 9u);
  EXPECT_EQ(reports[0].method, "PCA");
  EXPECT_EQ(reports[0].dim, 2);
  EXPECT_EQ(reports[4].method, "MDS");
  EXPECT_EQ(reports[4].dim, 4);
  for (const auto& r : reports) {
    EXPECT_EQ(r.epochs, 2);
    EXPECT_EQ(r.curve.size(), 2u);
    EXPECT_EQ(r.wall_ms, 0);
    EXPECT_EQ(r.reference_rows, sweep_reference_rows(ReportTask::RELATION));
  }
  const auto eq = sweep_reference_rows(ReportTask::EQUATION);
  ASSERT_EQ(eq.size(), 4u);
  EXPECT_DOUBLE_EQ(eq[0].value, 0.2776);
  EXPECT_DOUBLE_EQ(eq[3].value, 0.0752);
  EXPECT_DOUBLE_EQ(sweep_reference_rows(ReportTask::ANSWER)[1].value, 0.2375);
}

TEST(Sweep, DeterministicAcrossRunsAndThreads) {
  const SweepFixture f;
  auto cfg = small_sweep();
  cfg.methods.push_back(Method::LINEAR);
  cfg.tasks.push_back(ReportTask::ANSWER);
  cfg.include_uncompressed = true;
  const auto a = run_compression_sweep(cfg, f.teacher, f.train, f.eval);
  const auto b = run_compression_sweep(cfg, f.teacher, f.train, f.eval);
  cfg.threads = 3;
  const auto c = run_compression_sweep(cfg, f.teacher, f.train, f.eval);
  EXPECT_EQ(a.size(), 2u + 4u * 3u * 2u);
  EXPECT_EQ(render_report(a, ReportFormat::JSON), render_report(b, ReportFormat::JSON));
  EXPECT_EQ(render_report(a, ReportFormat::JSON), render_report(c, ReportFormat::JSON));
  EXPECT_EQ(a[0].method, "NONE");
  EXPECT_EQ(a[0].dim, 12);
}

TEST(Sweep, ConfigErrors) {
  const SweepFixture f;
  auto cfg = small_sweep();
  cfg.methods = {Method::TSNE2D};
  EXPECT_THROW_KIND(run_compression_sweep(cfg, f.teacher, f.train, f.eval), ErrorKind::Param);
  cfg = small_sweep();
  cfg.dims = {13};
  EXPECT_THROW_KIND(run_compression_sweep(cfg, f.teacher, f.train, f.eval), ErrorKind::Param);
  cfg = small_sweep();
  cfg.tasks.clear();
  EXPECT_THROW_KIND(run_compression_sweep(cfg, f.teacher, f.train, f.eval), ErrorKind::Param);
}

StudentConfig tiny_student(std::uint64_t seed) {
  StudentConfig c;
  c.vocab_size = vocab();
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_len = 64;
  c.seed = seed;
  return c;
}

TEST(Compare, IdenticalArmsGiveIdenticalReports) {
  const SweepFixture f;
  const auto s = init_student(tiny_student(1));
  CompareConfig cfg;
  cfg.tasks = {ReportTask::EQUATION, ReportTask::ANSWER};
  cfg.decoder.epochs = 2;
  const auto reports = run_distillation_comparison(cfg, s, s, f.train, f.eval);
  ASSERT_EQ(reports.size(), 4u);
  for (std::size_t i = 0; i < reports.size(); i += 2) {
    EXPECT_FALSE(reports[i].distilled);
    EXPECT_TRUE(reports[i + 1].distilled);
    EXPECT_EQ(reports[i].initial_accuracy, reports[i + 1].initial_accuracy);
    EXPECT_EQ(reports[i].final_accuracy, reports[i + 1].final_accuracy);
    EXPECT_EQ(reports[i].curve, reports[i + 1].curve);
    // All four published cells travel with every report.
    EXPECT_EQ(reports[i].reference_rows.size(), 4u);
  }
  EXPECT_DOUBLE_EQ(reports[0].reference_rows[1].value, 0.0571);
  EXPECT_DOUBLE_EQ(reports[2].reference_rows[3].value, 0.3337);

  cfg.train_student = true;
  cfg.decoder.epochs = 1;
  const auto trained = run_distillation_comparison(cfg, s, s, f.train, f.eval);
  EXPECT_EQ(trained[0].final_accuracy, trained[1].final_accuracy);
}

TEST(Compare, ArchitectureMismatch) {
  const SweepFixture f;
  auto other = tiny_student(1);
  other.d_ff = 24;
  CompareConfig cfg;
  cfg.tasks = {ReportTask::RELATION};
  EXPECT_THROW_KIND(run_distillation_comparison(cfg, init_student(tiny_student(1)), init_student(other), f.train,
                                                f.eval),
                    ErrorKind::Config);
}

MetricReport sample_report(double final_acc, std::uint64_t seed) {
  MetricReport r;
  r.task = ReportTask::EQUATION;
  r.method = "PCA, whitened";  // exercises CSV quoting
  r.dim = 4;
  r.seed = seed;
  r.initial_accuracy = 0.1;
  r.final_accuracy = final_acc;
  r.curve = {0.2, final_acc};
  r.epochs = 2;
  r.wall_ms = 17;
  r.reference_rows = sweep_reference_rows(ReportTask::EQUATION);
  return r;
}

TEST(Report, JsonRoundTrip) {
  const std::vector<MetricReport> reports = {sample_report(0.3, 1), sample_report(1.0 / 3.0, 2)};
  EXPECT_EQ(reports_from_json(render_report(reports, ReportFormat::JSON)), reports);
}

TEST(Report, CsvShapeAndQuoting) {
  const std::vector<MetricReport> reports = {sample_report(0.3, 1), sample_report(0.5, 2)};
  const auto csv = render_report(reports, ReportFormat::CSV);
  EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "task,method,dim,distilled,seed,initial_acc,final_acc,epochs,wall_ms");
  EXPECT_NE(csv.find("\"PCA, whitened\""), std::string::npos);
  // Field count per line, counting commas outside quotes.
  std::size_t start = 0;
  int lines = 0;
  for (std::size_t end; (end = csv.find("\r\n", start)) != std::string::npos; start = end + 2, ++lines) {
    int fields = 1;
    bool quoted = false;
    for (std::size_t i = start; i < end; ++i) {
      if (csv[i] == '"') quoted = !quoted;
      if (csv[i] == ',' && !quoted) ++fields;
    }
    EXPECT_EQ(fields, 9);
  }
  EXPECT_EQ(lines, 3);
}

TEST(Report, EmptyListHasHeaders) {
  EXPECT_EQ(render_report({}, ReportFormat::CSV), "task,method,dim,distilled,seed,initial_acc,final_acc,epochs,wall_ms\r\n");
  EXPECT_TRUE(reports_from_json(render_report({}, ReportFormat::JSON)).empty());
  EXPECT_EQ(render_report({}, ReportFormat::MARKDOWN), "# Report\n");
}

TEST(Report, MarkdownFlagsReferenceRows) {
  const auto md = render_report({sample_report(0.3, 1), sample_report(0.4, 2)}, ReportFormat::MARKDOWN);
  EXPECT_NE(md.find("## EQUATION"), std::string::npos);
  std::size_t count = 0;
  for (std::size_t pos = 0; (pos = md.find("published (not reproduced)", pos)) != std::string::npos; ++pos) ++count;
  EXPECT_EQ(count, 4u);  // deduplicated across the two reports
  EXPECT_EQ(md.find("## RELATION"), std::string::npos);
}

TEST(Report, FilesAreWrittenWhole) {
  TempDir dir;
  emit_report({sample_report(0.3, 1)}, ReportFormat::JSON, dir.path() / "r.json");
  EXPECT_EQ(reports_from_json(read_file(dir.path() / "r.json")).size(), 1u);
  EXPECT_EQ(parse_report_format("md"), ReportFormat::MARKDOWN);
  EXPECT_FALSE(parse_report_format("xml"));
}

TEST(Report, OutOfRangeMetricIsAnError) {
  auto r = sample_report(0.3, 1);
  r.final_accuracy = 1.2;
  EXPECT_THROW_KIND(r.validate(), ErrorKind::Validation);
  r = sample_report(0.3, 1);
  r.curve.push_back(0.5);
  EXPECT_THROW_KIND(r.validate(), ErrorKind::Validation);
  r = sample_report(0.3, 1);
  r.reference_rows[0].reference = false;
  EXPECT_THROW_KIND(r.validate(), ErrorKind::Validation);
}

TEST(Summary, MediansIgnoreReferenceRows) {
  std::vector<MetricReport> reports;
  for (double v : {0.1, 0.5, 0.3}) reports.push_back(sample_report(v, 1));
  auto rows = summarize(reports);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_DOUBLE_EQ(rows[0].median_final, 0.3);
  EXPECT_EQ(rows[0].runs, 3);
  for (auto& r : reports) r.reference_rows.clear();
  EXPECT_DOUBLE_EQ(summarize(reports)[0].median_final, 0.3);
}

TEST(Gap, ReferenceTable) {
  const auto rows = gap_reference_rows();
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_DOUBLE_EQ(rows[0].value, 0.1349);
  EXPECT_DOUBLE_EQ(rows[5].value, 0.2599);
  for (const auto& r : rows) EXPECT_TRUE(r.reference);
}

}  // namespace
}  // namespace mwpkd
