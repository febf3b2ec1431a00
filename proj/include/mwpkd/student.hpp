#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mwpkd {

class Rng;

struct StudentConfig {
  std::int64_t vocab_size = 0;
  int d_model = 256;
  int n_layers = 3;
  int n_heads = 16;
  int d_ff = 1024;
  int max_len = 128;
  double dropout_rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
  friend bool operator==(const StudentConfig&, const StudentConfig&) = default;
};

// Row-vector convention: a layer maps X (n x d_in) to X * W (W is d_in x d_out).
// Biases and layer-norm parameters are 1 x width matrices.
struct LayerParams {
  Eigen::MatrixXd W_Q, W_K, W_V, W_O;
  Eigen::MatrixXd W_1, b_1, W_2, b_2;
  Eigen::MatrixXd ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct StudentParams {
  StudentConfig cfg;
  Eigen::MatrixXd token_embedding;      // vocab_size x d_model
  Eigen::MatrixXd positional_encoding;  // max_len x d_model, fixed
  std::vector<LayerParams> layers;

  // Visits every trainable tensor in declaration order as (name, tensor).
  template <typename F>
  void for_each_tensor(F&& f) {
    f(std::string("token_embedding"), token_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) visit_layer(l, layers[l], f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    f(std::string("token_embedding"), token_embedding);
    for (std::size_t l = 0; l < layers.size(); ++l) visit_layer(l, layers[l], f);
  }

 private:
  template <typename L, typename F>
  static void visit_layer(std::size_t l, L& p, F& f) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    f(pre + "W_Q", p.W_Q);
    f(pre + "W_K", p.W_K);
    f(pre + "W_V", p.W_V);
    f(pre + "W_O", p.W_O);
    f(pre + "W_1", p.W_1);
    f(pre + "b_1", p.b_1);
    f(pre + "W_2", p.W_2);
    f(pre + "b_2", p.b_2);
    f(pre + "ln1_gamma", p.ln1_gamma);
    f(pre + "ln1_beta", p.ln1_beta);
    f(pre + "ln2_gamma", p.ln2_gamma);
    f(pre + "ln2_beta", p.ln2_beta);
  }
};

// Same layout as the parameters; positional_encoding stays empty.
using GradientSet = StudentParams;

StudentParams init_student(const StudentConfig& cfg);
GradientSet zero_gradients(const StudentParams& params);
std::int64_t trainable_parameter_count(const StudentParams& params);
// Closed form for the default layout (no attention biases, FFN biases, two
// layer norms per layer).
std::int64_t closed_form_parameter_count(const StudentConfig& cfg);
Eigen::MatrixXd sinusoidal_encoding(int max_len, int d_model);

// FNV-1a over the raw bytes of every trainable tensor, in visiting order.
std::uint64_t param_checksum(const StudentParams& params);

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
Mat<T> scaled_dot_attention(const Mat<T>& Q, const Mat<T>& K, const Mat<T>& V);
template <typename T>
Mat<T> multi_head_attention(const Mat<T>& X, const LayerParams& layer, int n_heads);
template <typename T>
Mat<T> ffn(const Mat<T>& X, const LayerParams& layer);
template <typename T>
Mat<T> layer_norm(const Mat<T>& X, const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& beta);

inline constexpr double kLayerNormEps = 1e-5;

// Inference forward pass (dropout off). T selects 32- or 64-bit arithmetic.
template <typename T>
Mat<T> student_forward(const StudentParams& params, std::span<const std::int64_t> token_ids);

// Loss head for one problem: returns the loss and writes d loss / d hidden.
using LossHead = std::function<double(std::size_t problem, const Eigen::MatrixXd& hidden, Eigen::MatrixXd& d_hidden)>;

struct BackwardOptions {
  int threads = 1;
  Rng* dropout_rng = nullptr;  // dropout active only when set and rate > 0
};

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
};

// Exact reverse-mode gradients of the summed per-problem losses. Work is split
// into contiguous chunks per worker and reduced in worker order.
BackwardResult student_backward(const StudentParams& params,
                                const std::vector<std::vector<std::int64_t>>& batch, const LossHead& head,
                                const BackwardOptions& opts = {});

// "STU1": magic, u32 version, config block, u32 tensor count, then per tensor
// name, rows, cols and row-major f32 payload.
std::string encode_student(const StudentParams& params);
StudentParams decode_student(std::string_view bytes);
void save_student(const StudentParams& params, const std::filesystem::path& path);
StudentParams load_student(const std::filesystem::path& path);

}  // namespace mwpkd
