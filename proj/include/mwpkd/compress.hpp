#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mwpkd {

enum class Method : std::uint8_t { LINEAR = 0, PCA = 1, MDS = 2, LLE = 3, ISOMAP = 4, TSNE2D = 5, PRUNE = 6 };

std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);  // case-insensitive

// A fitted compressor. Which fields are populated depends on the method:
//   LINEAR/PCA/PRUNE: components (and mean for LINEAR/PCA)
//   MDS/LLE/ISOMAP:   fitted_points, fitted_embedding, neighbors_k
//   TSNE2D:           fitted_embedding only
struct Projection {
  Method method = Method::LINEAR;
  int in_dim = 0;
  int out_dim = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // out_dim x in_dim
  Eigen::MatrixXd fitted_points;
  Eigen::MatrixXd fitted_embedding;  // n x out_dim
  int neighbors_k = 0;
  std::vector<int> selected_indices;

  // Fit diagnostics; not serialized.
  Eigen::VectorXd eigenvalues;
  int clamped_eigenvalues = 0;
  std::vector<std::string> warnings;
};

Projection fit_pca(const Eigen::MatrixXd& X, int k, bool standardize = false);

struct MdsOptions {
  int neighbors_k = 10;  // out-of-sample neighbourhood (clamped to n-1)
  bool smacof = false;
  int smacof_max_iter = 300;
  double smacof_tol = 1e-9;
};

// From a distance matrix (no out-of-sample support) or from points.
Projection fit_classical_mds_distances(const Eigen::MatrixXd& D, int k, const MdsOptions& opts = {});
Projection fit_classical_mds(const Eigen::MatrixXd& X, int k, const MdsOptions& opts = {});

Projection fit_lle(const Eigen::MatrixXd& X, int k, int n_neighbors, double reg = 1e-3);
Projection fit_isomap(const Eigen::MatrixXd& X, int k, int n_neighbors);

struct TsneOptions {
  double perplexity = 30.0;
  int iters = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  int exaggeration_iters = 250;
  double exaggeration = 12.0;
  int momentum_switch_iter = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
};

Projection fit_tsne2d(const Eigen::MatrixXd& X, const TsneOptions& opts);

// Conditional affinities with per-point bandwidths matched to the perplexity;
// returns the row-stochastic matrix and the achieved entropies (nats).
struct Affinities {
  Eigen::MatrixXd conditional;
  Eigen::VectorXd entropy;
};
Affinities tsne_affinities(const Eigen::MatrixXd& X, double perplexity, double tol = 1e-4);

enum class PruneCriterion { VARIANCE, ABSMEAN };
Projection prune_dims(const Eigen::MatrixXd& X, int k, PruneCriterion criterion = PruneCriterion::VARIANCE);

Projection make_linear(const Eigen::MatrixXd& components, const Eigen::VectorXd& mean);
// Xavier-uniform components, zero mean.
Projection random_linear(int in_dim, int out_dim, std::uint64_t seed);

Eigen::MatrixXd apply_projection(const Projection& p, const Eigen::MatrixXd& X);

// Constrained least-squares weights reconstructing `x` from the rows of
// `neighbors`; the weights sum to one. The local Gram matrix is regularized
// by reg * trace.
Eigen::VectorXd reconstruction_weights(const Eigen::RowVectorXd& x, const Eigen::MatrixXd& neighbors,
                                       double reg);

// Indices of the k nearest rows of `points` to `x` (ties to lower index),
// skipping `exclude` when non-negative.
std::vector<int> nearest_rows(const Eigen::MatrixXd& points, const Eigen::RowVectorXd& x, int k,
                              int exclude = -1);

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& X);
// Kruskal stress-1 between target distances and the embedding's distances.
double kruskal_stress(const Eigen::MatrixXd& D, const Eigen::MatrixXd& Y);

inline constexpr int kHistogramBins = 64;
inline constexpr double kHistogramRange = 4.0;  // bins span [-4, 4]; outliers go to edge bins

struct DimStats {
  Eigen::VectorXd per_dim_mean;
  Eigen::VectorXd per_dim_var;
  std::vector<bool> constant_dims;
  double pooled_skewness = 0.0;
  double pooled_excess_kurtosis = 0.0;
  std::array<std::int64_t, kHistogramBins> histogram{};
  std::int64_t pooled_count = 0;
  bool approx_normal = false;
};

DimStats dim_stats(const Eigen::MatrixXd& X);

// Mean over all row pairs of |cos(x_i, x_j) - cos(y_i, y_j)|.
double self_similarity_gap(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

std::string encode_projection(const Projection& p);
Projection decode_projection(std::string_view bytes);
void save_projection(const Projection& p, const std::filesystem::path& path);
Projection load_projection(const std::filesystem::path& path);

}  // namespace mwpkd
