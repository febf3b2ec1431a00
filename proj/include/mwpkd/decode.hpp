#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mwpkd/compress.hpp"
#include "mwpkd/corpus.hpp"
#include "mwpkd/embeddings.hpp"
#include "mwpkd/expr.hpp"
#include "mwpkd/student.hpp"

namespace mwpkd {

enum class Task : std::uint8_t { RELATION = 0, EQUATION = 1, POS = 2 };
std::string_view task_name(Task t);
std::optional<Task> parse_task(std::string_view name);  // case-insensitive

// Rows of V at the quantity positions, in the given order.
Eigen::MatrixXd quantity_vectors(const Eigen::MatrixXd& V, const std::vector<int>& quantity_indices);

// ---- relation head ----

struct QranParams {
  Eigen::MatrixXd W_r;     // h x 2d
  Eigen::MatrixXd alpha;   // h x 1
  Eigen::MatrixXd W_c;     // 1 x d
  Eigen::MatrixXd beta_c;  // 1 x 1
};
QranParams init_qran(int d, int h, std::uint64_t seed);

struct QranGoal {
  Eigen::VectorXd v_g;
  Eigen::VectorXd attention;
  Eigen::VectorXd logits;  // mu
};
QranGoal qran_goal_vector(const Eigen::MatrixXd& V, const Eigen::MatrixXd& N, const QranParams& p);
double qran_predict(const Eigen::VectorXd& v_g, const QranParams& p);

// Binary cross-entropy for one problem; accumulates into `g` and (when given) d loss / dV.
double qran_loss(const Eigen::MatrixXd& V, const std::vector<int>& quantity_indices, int label, const QranParams& p,
                 QranParams& g, Eigen::MatrixXd* dV);

// ---- equation head ----

inline const std::vector<std::string> kDefaultConstants = {"C:1", "C:2", "C:3.14"};

struct TreeDecoderParams {
  std::vector<std::string> constants;
  Eigen::MatrixXd op_embedding;     // 5 x d
  Eigen::MatrixXd const_embedding;  // |constants| x d
  Eigen::MatrixXd W_s;              // d x 2d
  Eigen::MatrixXd w_s;              // d x 1
  Eigen::MatrixXd W_l;              // d x 2d
  Eigen::MatrixXd W_rg;             // d x 3d
  Eigen::MatrixXd W_m;              // d x 3d
  Eigen::MatrixXd u_p;              // d x 1
};
TreeDecoderParams init_tree_decoder(int d, std::uint64_t seed,
                                    const std::vector<std::string>& constants = kDefaultConstants);

struct DecodeOutput {
  ExprTree tree;
  bool depth_capped = false;  // an operator scored best where the cap forced a leaf
};
DecodeOutput tree_decode(const Eigen::MatrixXd& V, const std::vector<int>& quantity_indices,
                         const TreeDecoderParams& p, int max_depth);

// Teacher-forced cross-entropy summed over the nodes of `gold`.
double tree_loss(const Eigen::MatrixXd& V, const std::vector<int>& quantity_indices, const ExprTree& gold,
                 const TreeDecoderParams& p, TreeDecoderParams& g, Eigen::MatrixXd* dV);

// ---- POS head ----

struct PosHeadParams {
  Eigen::MatrixXd W_p;  // 12 x d
  Eigen::MatrixXd b_p;  // 12 x 1
};
PosHeadParams init_pos_head(int d, std::uint64_t seed);
Eigen::MatrixXd pos_predict(const Eigen::MatrixXd& V, const PosHeadParams& p);  // n x 12, rows sum to 1
std::vector<PosTag> pos_argmax(const Eigen::MatrixXd& probs);
// Mean token cross-entropy.
double pos_loss(const Eigen::MatrixXd& V, const std::vector<PosTag>& tags, const PosHeadParams& p,
                PosHeadParams& g, Eigen::MatrixXd* dV);

// ---- head container ----

struct HeadParams {
  Task task = Task::RELATION;
  int dim = 0;
  QranParams qran;
  TreeDecoderParams tree;
  PosHeadParams pos;

  // Visits the tensors of the active head.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename H, typename F>
  static void visit(H& h, F& f) {
    switch (h.task) {
      case Task::RELATION:
        f(std::string("W_r"), h.qran.W_r);
        f(std::string("alpha"), h.qran.alpha);
        f(std::string("W_c"), h.qran.W_c);
        f(std::string("beta_c"), h.qran.beta_c);
        break;
      case Task::EQUATION:
        f(std::string("op_embedding"), h.tree.op_embedding);
        f(std::string("const_embedding"), h.tree.const_embedding);
        f(std::string("W_s"), h.tree.W_s);
        f(std::string("w_s"), h.tree.w_s);
        f(std::string("W_l"), h.tree.W_l);
        f(std::string("W_rg"), h.tree.W_rg);
        f(std::string("W_m"), h.tree.W_m);
        f(std::string("u_p"), h.tree.u_p);
        break;
      case Task::POS:
        f(std::string("W_p"), h.pos.W_p);
        f(std::string("b_p"), h.pos.b_p);
        break;
    }
  }
};

HeadParams init_head(Task task, int dim, std::uint64_t seed,
                     const std::vector<std::string>& constants = kDefaultConstants);
HeadParams zero_like(const HeadParams& h);

// Loss of one record under the head; accumulates gradients and d loss / dV.
double head_loss(const HeadParams& h, const Eigen::MatrixXd& V, const MwpRecord& r, HeadParams& g,
                 Eigen::MatrixXd* dV);

// "HDR1": magic, u32 version, u8 task, u32 dim, u32 constant count and
// strings, u32 tensor count, then per tensor name, rows, cols, f32 payload.
std::string encode_head(const HeadParams& h);
HeadParams decode_head(std::string_view bytes);
void save_head(const HeadParams& h, const std::filesystem::path& path);
HeadParams load_head(const std::filesystem::path& path);

// ---- predictions ----

struct Prediction {
  std::string id;
  Task task = Task::RELATION;
  std::string prediction;  // "0"/"1", prefix tokens joined by spaces, or tags joined by spaces
  double score = 0.0;      // relation probability, answer value, or mean max tag probability
  bool answer_valid = false;
};

struct PredictOptions {
  int max_depth = 8;
};

Prediction predict(const HeadParams& h, const Eigen::MatrixXd& V, const MwpRecord& r,
                   const PredictOptions& opts = {});
std::string predictions_to_jsonl(const std::vector<Prediction>& preds);

// ---- training ----

// Supplies per-record vectors. Exactly one of `vectors` (precomputed, aligned
// by id) or `student` must be set. `joint` is an optional LINEAR compressor
// applied on top and trained with the head.
struct EncoderStack {
  const EmbeddingSet* vectors = nullptr;
  StudentParams* student = nullptr;
  bool train_student = false;
  Projection* joint = nullptr;

  int output_dim() const;
};

struct TaskScores {
  double accuracy = 0.0;         // relation / equation / POS token accuracy
  double answer_accuracy = 0.0;  // EQUATION only
};

struct DecoderConfig {
  Task task = Task::RELATION;
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  int max_depth = 8;
  std::vector<std::string> constants = kDefaultConstants;
  bool canonicalize = false;  // compare equations after commutative canonicalization
  bool stop_at_perfect = false;
  int eval_every = 1;
  // Called after each evaluated epoch with (epoch, mean train loss, eval scores).
  std::function<void(int, double, const TaskScores&)> on_epoch;
};

struct DecoderResult {
  HeadParams head;
  TaskScores initial;
  TaskScores final_scores;
  std::vector<TaskScores> curve;  // one entry per evaluated epoch
  std::vector<double> epoch_loss;
  double initial_loss = 0.0;
  int epochs_run = 0;
};

// Answer tolerance |pred - gold| <= 1e-4 * max(1, |gold|).
bool answer_matches(double predicted, double gold);

DecoderResult train_decoder(EncoderStack& encoder, const std::vector<MwpRecord>& train,
                            const std::vector<MwpRecord>& eval, const DecoderConfig& cfg);

// Scores a head on records with the given encoder (no training).
TaskScores evaluate_head(const HeadParams& h, EncoderStack& encoder, const std::vector<MwpRecord>& records,
                         const DecoderConfig& cfg);

// ---- attribution ----

enum class TokenCategory : std::uint8_t { PUNCTUATION, NOUN, NUMBER, KEYWORD, QUANTITY_WORD, OTHER };
inline constexpr int kTokenCategoryCount = 6;
std::string_view category_name(TokenCategory c);

struct AttributionRow {
  TokenCategory category;
  std::int64_t count = 0;
};

// For every dimension, the token with the largest |value| across the corpus
// is bucketed; rows are ranked by count (ties by category order). Only the
// first `top_m` rows are returned.
std::vector<AttributionRow> top_token_attribution(const EmbeddingSet& E, const std::vector<MwpRecord>& records,
                                                  int top_m = kTokenCategoryCount);

}  // namespace mwpkd
