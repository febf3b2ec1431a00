#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mwpkd/compress.hpp"
#include "mwpkd/embeddings.hpp"
#include "mwpkd/student.hpp"

namespace mwpkd {

struct KdLoss {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d z_S
};

// Mean over unmasked elements of ((z_T - z_S) / t)^2. `row_mask` (when given)
// marks the rows that count.
KdLoss kd_loss(const Eigen::MatrixXd& z_T, const Eigen::MatrixXd& z_S, double t,
               const std::vector<bool>* row_mask = nullptr);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<Eigen::MatrixXd> m, v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update over parallel lists of tensors. The state is
// shaped on first use.
void adam_step(const std::vector<Eigen::MatrixXd*>& params, const std::vector<const Eigen::MatrixXd*>& grads,
               OptimizerState& state, const AdamConfig& cfg);

// Scales grads in place so their global L2 norm is at most max_norm; returns
// the norm before scaling. max_norm <= 0 disables clipping.
double clip_global_norm(const std::vector<Eigen::MatrixXd*>& grads, double max_norm);

std::vector<Eigen::MatrixXd*> tensor_list(StudentParams& p);
std::vector<const Eigen::MatrixXd*> tensor_list(const StudentParams& p);

struct DistillConfig {
  double temperature = 1.0;
  AdamConfig adam;
  double clip_norm = 5.0;
  int batch_size = 8;
  std::int64_t stage1_steps = 1000;
  std::int64_t stage2_steps = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path stage1_path;
  std::filesystem::path stage2_path;
  std::filesystem::path stage1_checkpoint;  // optional STU1 written at the stage boundary
  // Fixed compressor applied to teacher vectors; identity when absent.
  std::optional<Projection> compressor;
  bool mask_special = true;
  int threads = 1;

  void validate() const;  // ParamError
};

struct DistillLogRow {
  std::int64_t step = 0;
  int stage = 1;
  double loss = 0.0;
  double lr = 0.0;
  std::int64_t wall_ms = 0;
  std::optional<std::string> param_checksum;
};

std::string log_to_jsonl(const std::vector<DistillLogRow>& rows);

// Compressed per-problem targets aligned with the token ids the student reads.
struct DistillTargets {
  std::vector<std::string> ids;
  std::vector<std::vector<std::int64_t>> token_ids;
  std::vector<Eigen::MatrixXd> targets;
  std::vector<std::vector<bool>> row_mask;
  std::string source_tag;
};

DistillTargets prepare_targets(const EmbeddingSet& teacher, const DistillConfig& cfg, const StudentConfig& student);

// Full-dataset KD loss (masked mean over all target elements).
double distill_eval_loss(const StudentParams& student, const DistillTargets& data, double temperature);

struct StageSummary {
  std::string source_tag;
  double initial_loss = 0.0;  // full-dataset loss before the first step
  double final_loss = 0.0;
  std::uint64_t start_checksum = 0;
  std::uint64_t end_checksum = 0;
  std::int64_t steps = 0;
};

struct DistillResult {
  StudentParams student;
  std::vector<DistillLogRow> log;
  std::vector<StageSummary> stages;
};

// Stage 1 against `stage1`, then (when given) stage 2 continuing from the
// in-memory stage-1 parameters.
DistillResult train_distill(StudentParams student, const DistillConfig& cfg, const EmbeddingSet& stage1,
                            const EmbeddingSet* stage2 = nullptr);
// Reads cfg.stage1_path and, when set, cfg.stage2_path.
DistillResult train_distill(StudentParams student, const DistillConfig& cfg);

}  // namespace mwpkd
