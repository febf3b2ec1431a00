#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mwpkd/compress.hpp"
#include "mwpkd/corpus.hpp"
#include "mwpkd/decode.hpp"
#include "mwpkd/embeddings.hpp"
#include "mwpkd/student.hpp"

namespace mwpkd {

// ANSWER scores an equation head by executing its output.
enum class ReportTask : std::uint8_t { RELATION = 0, EQUATION = 1, ANSWER = 2, POS = 3 };
std::string_view report_task_name(ReportTask t);
std::optional<ReportTask> parse_report_task(std::string_view name);  // case-insensitive
Task head_task(ReportTask t);

struct TaskMetrics {
  double accuracy = 0.0;
  double precision = 0.0;  // RELATION only; 0 when nothing is predicted positive
  double recall = 0.0;     // RELATION only; 0 when there are no positives
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t count = 0;  // scored items (tokens for POS)
};

TaskMetrics relation_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn);

// Predictions are matched to gold records by id; both sides must cover the
// same ids (AlignmentError otherwise).
TaskMetrics compute_metrics(ReportTask task, const std::vector<Prediction>& predictions,
                            const std::vector<MwpRecord>& gold);

struct ReferenceRow {
  std::string label;
  double value = 0.0;  // fraction in [0, 1] or a raw statistic
  std::string citation;
  bool reference = true;  // never computed here

  friend bool operator==(const ReferenceRow&, const ReferenceRow&) = default;
};

// Published numbers, shipped as data for side-by-side display.
std::vector<ReferenceRow> sweep_reference_rows(ReportTask task);
std::vector<ReferenceRow> distill_reference_rows(ReportTask task);
std::vector<ReferenceRow> gap_reference_rows();

struct MetricReport {
  ReportTask task = ReportTask::RELATION;
  std::string method;  // compressor name, "NONE", or "STUDENT"
  int dim = 0;
  bool distilled = false;
  std::uint64_t seed = 0;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  std::vector<double> curve;
  int epochs = 0;
  std::int64_t wall_ms = 0;
  std::vector<ReferenceRow> reference_rows;

  // Accuracies in [0, 1] and one curve point per epoch; Validation otherwise.
  void validate() const;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

// Token vectors of `records` under a projection / a student. `single` runs
// the student forward pass in 32-bit arithmetic.
EmbeddingSet project_set(const EmbeddingSet& set, const Projection& p, const std::string& source_tag);
EmbeddingSet student_embeddings(const StudentParams& student, const std::vector<MwpRecord>& records,
                                const std::string& source_tag, bool single = false);

struct SweepConfig {
  std::vector<Method> methods;
  std::vector<int> dims;
  std::vector<ReportTask> tasks;
  DecoderConfig decoder;  // task is set per cell
  std::uint64_t seed = 0;
  int neighbors = 10;       // LLE / ISOMAP / MDS out-of-sample neighbourhood
  int fit_rows = 400;       // token rows sampled to fit MDS / LLE / ISOMAP
  bool include_uncompressed = false;  // adds a NONE cell per task at the encoder's width
  int threads = 1;
  bool timing = false;      // wall_ms stays 0 unless set, keeping reports byte-stable

  void validate() const;
};

// One report per (method, dim, task) in that nesting order.
std::vector<MetricReport> run_compression_sweep(const SweepConfig& cfg, const EmbeddingSet& encoder,
                                                const std::vector<MwpRecord>& train,
                                                const std::vector<MwpRecord>& eval);

struct CompareConfig {
  std::vector<ReportTask> tasks;
  DecoderConfig decoder;
  bool train_student = false;
  bool single = false;  // 32-bit forward passes for the frozen students
  bool timing = false;
};

// Per task: the undistilled report, then the distilled one.
std::vector<MetricReport> run_distillation_comparison(const CompareConfig& cfg, const StudentParams& distilled,
                                                      const StudentParams& undistilled,
                                                      const std::vector<MwpRecord>& train,
                                                      const std::vector<MwpRecord>& eval);

struct SummaryRow {
  ReportTask task = ReportTask::RELATION;
  std::string method;
  int dim = 0;
  bool distilled = false;
  double median_final = 0.0;
  int runs = 0;
};

// Median final accuracy per (task, method, dim, distilled) across seeds, in
// first-seen order. Reference rows are not consulted.
std::vector<SummaryRow> summarize(const std::vector<MetricReport>& reports);

enum class ReportFormat { JSON, CSV, MARKDOWN };
std::optional<ReportFormat> parse_report_format(std::string_view name);

std::string render_report(const std::vector<MetricReport>& reports, ReportFormat format);
std::vector<MetricReport> reports_from_json(std::string_view text);
void emit_report(const std::vector<MetricReport>& reports, ReportFormat format, const std::filesystem::path& path);

}  // namespace mwpkd
