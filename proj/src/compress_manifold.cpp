#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include <Eigen/Cholesky>

#include "compress_internal.hpp"
#include "mwpkd/compress.hpp"
#include "mwpkd/error.hpp"

namespace mwpkd {

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& X) {
  const auto n = X.rows();
  Eigen::MatrixXd D(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    D(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (X.row(i) - X.row(j)).norm();
      D(i, j) = d;
      D(j, i) = d;
    }
  }
  return D;
}

double kruskal_stress(const Eigen::MatrixXd& D, const Eigen::MatrixXd& Y) {
  if (D.rows() != Y.rows() || D.cols() != D.rows()) fail(ErrorKind::Shape, "stress shape mismatch");
  const Eigen::MatrixXd E = pairwise_distances(Y);
  const double num = (D - E).squaredNorm();
  const double den = D.squaredNorm();
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<int> nearest_rows(const Eigen::MatrixXd& points, const Eigen::RowVectorXd& x, int k,
                              int exclude) {
  const auto n = static_cast<int>(points.rows());
  std::vector<std::pair<double, int>> d;
  d.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (i == exclude) continue;
    d.emplace_back((points.row(i) - x).squaredNorm(), i);
  }
  k = std::min<int>(k, static_cast<int>(d.size()));
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

Eigen::VectorXd reconstruction_weights(const Eigen::RowVectorXd& x, const Eigen::MatrixXd& neighbors,
                                       double reg) {
  const auto k = neighbors.rows();
  const Eigen::MatrixXd Z = neighbors.rowwise() - x;
  Eigen::MatrixXd C = Z * Z.transpose();
  const double tr = C.trace();
  const double ridge = tr > 0.0 ? reg * tr : reg;
  C.diagonal().array() += ridge;
  Eigen::VectorXd w = C.ldlt().solve(Eigen::VectorXd::Ones(k));
  const double s = w.sum();
  if (!std::isfinite(s) || std::abs(s) < 1e-300) {
    fail(ErrorKind::Numerical, "degenerate neighbour reconstruction");
  }
  return w / s;
}

namespace {

void classical_embed(const Eigen::MatrixXd& D, int k, Projection& p) {
  const auto n = D.rows();
  const Eigen::MatrixXd D2 = D.array().square().matrix();
  const Eigen::MatrixXd J =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  Eigen::MatrixXd B = -0.5 * J * D2 * J;
  B = 0.5 * (B + B.transpose());
  auto top = detail::top_eigenpairs(B, k, true);
  p.eigenvalues = top.values;
  p.fitted_embedding.resize(n, k);
  p.clamped_eigenvalues = 0;
  const double scale = std::max(1.0, std::abs(top.values(0)));
  for (int j = 0; j < k; ++j) {
    double lambda = top.values(j);
    if (lambda < 0.0) {
      if (lambda < -1e-10 * scale) ++p.clamped_eigenvalues;
      lambda = 0.0;
    }
    Eigen::VectorXd v = top.vectors.col(j);
    detail::canonicalize_sign(v);
    p.fitted_embedding.col(j) = v * std::sqrt(lambda);
  }
  if (p.clamped_eigenvalues > 0) {
    p.warnings.push_back(std::to_string(p.clamped_eigenvalues) +
                         " negative eigenvalue(s) clamped to zero (distances are not Euclidean)");
  }
}

void smacof_refine(const Eigen::MatrixXd& D, const MdsOptions& opts, Projection& p) {
  const auto n = D.rows();
  Eigen::MatrixXd Y = p.fitted_embedding;
  double prev = kruskal_stress(D, Y);
  for (int it = 0; it < opts.smacof_max_iter; ++it) {
    const Eigen::MatrixXd E = pairwise_distances(Y);
    Eigen::MatrixXd Bm = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i != j && E(i, j) > 1e-15) Bm(i, j) = -D(i, j) / E(i, j);
      }
      Bm(i, i) = -Bm.row(i).sum();
    }
    Y = Bm * Y / static_cast<double>(n);
    const double s = kruskal_stress(D, Y);
    if (prev - s < opts.smacof_tol) {
      prev = s;
      break;
    }
    prev = s;
  }
  p.fitted_embedding = Y;
}

void check_distance_matrix(const Eigen::MatrixXd& D) {
  if (D.rows() != D.cols()) fail(ErrorKind::Shape, "distance matrix must be square");
  detail::check_finite(D, "distance matrix");
  const double tol = 1e-9 * std::max(1.0, D.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < D.rows(); ++i) {
    if (std::abs(D(i, i)) > tol) fail(ErrorKind::Param, "distance matrix diagonal must be zero");
    for (Eigen::Index j = 0; j < D.cols(); ++j) {
      if (D(i, j) < 0.0) fail(ErrorKind::Param, "distances must be non-negative");
      if (std::abs(D(i, j) - D(j, i)) > tol) fail(ErrorKind::Param, "distance matrix must be symmetric");
    }
  }
}

}  // namespace

Projection fit_classical_mds_distances(const Eigen::MatrixXd& D, int k, const MdsOptions& opts) {
  check_distance_matrix(D);
  const auto n = D.rows();
  if (n < 2 || k < 1 || k > n - 1) fail(ErrorKind::Param, "MDS target dim outside [1, n-1]");
  Projection p;
  p.method = Method::MDS;
  p.in_dim = static_cast<int>(n);
  p.out_dim = k;
  classical_embed(D, k, p);
  if (opts.smacof) smacof_refine(D, opts, p);
  return p;
}

Projection fit_classical_mds(const Eigen::MatrixXd& X, int k, const MdsOptions& opts) {
  detail::check_finite(X, "MDS input");
  const auto n = X.rows();
  if (n < 2 || k < 1 || k > n - 1) fail(ErrorKind::Param, "MDS target dim outside [1, n-1]");
  if (k > X.cols()) fail(ErrorKind::Param, "MDS target dim exceeds input dim");
  const Eigen::MatrixXd D = pairwise_distances(X);
  Projection p;
  p.method = Method::MDS;
  p.in_dim = static_cast<int>(X.cols());
  p.out_dim = k;
  classical_embed(D, k, p);
  if (opts.smacof) smacof_refine(D, opts, p);
  p.fitted_points = X;
  p.neighbors_k = std::max(1, std::min<int>(opts.neighbors_k, static_cast<int>(n - 1)));
  return p;
}

Projection fit_lle(const Eigen::MatrixXd& X, int k, int n_neighbors, double reg) {
  detail::check_finite(X, "LLE input");
  const auto n = static_cast<int>(X.rows());
  if (n_neighbors < 1 || n_neighbors >= n) {
    fail(ErrorKind::Neighbor, "n_neighbors=" + std::to_string(n_neighbors) + " must be in [1, n) with n=" +
                                  std::to_string(n));
  }
  if (k < 1 || k > X.cols() || k > n - 1) fail(ErrorKind::Param, "LLE target dim out of range");
  Projection p;
  p.method = Method::LLE;
  p.in_dim = static_cast<int>(X.cols());
  p.out_dim = k;
  if (k > n_neighbors) {
    p.warnings.push_back("target dim exceeds n_neighbors; embedding may be degenerate");
  }
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const auto nb = nearest_rows(X, X.row(i), n_neighbors, i);
    Eigen::MatrixXd N(static_cast<Eigen::Index>(nb.size()), X.cols());
    for (std::size_t j = 0; j < nb.size(); ++j) N.row(static_cast<Eigen::Index>(j)) = X.row(nb[j]);
    const Eigen::VectorXd w = reconstruction_weights(X.row(i), N, reg);
    for (std::size_t j = 0; j < nb.size(); ++j) W(i, nb[j]) = w(static_cast<Eigen::Index>(j));
  }
  const Eigen::MatrixXd IW = Eigen::MatrixXd::Identity(n, n) - W;
  const Eigen::MatrixXd M = IW.transpose() * IW;
  auto bottom = detail::top_eigenpairs(M, k + 1, false);
  p.eigenvalues = bottom.values.tail(k);
  p.fitted_embedding.resize(n, k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd v = bottom.vectors.col(j + 1);
    detail::canonicalize_sign(v);
    p.fitted_embedding.col(j) = v;
  }
  p.fitted_points = X;
  p.neighbors_k = n_neighbors;
  return p;
}

Projection fit_isomap(const Eigen::MatrixXd& X, int k, int n_neighbors) {
  detail::check_finite(X, "ISOMAP input");
  const auto n = static_cast<int>(X.rows());
  if (n_neighbors < 1 || n_neighbors >= n) fail(ErrorKind::Param, "n_neighbors must be in [1, n)");
  if (k < 1 || k > n - 1 || k > X.cols()) fail(ErrorKind::Param, "ISOMAP target dim out of range");

  std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
  {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j : nearest_rows(X, X.row(i), n_neighbors, i)) {
        const double d = (X.row(i) - X.row(j)).norm();
        w(i, j) = d;
        w(j, i) = d;
      }
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && (w(i, j) > 0.0 || w(j, i) > 0.0)) adj[i].emplace_back(j, w(i, j));
    // coincident neighbours have weight 0 and are linked explicitly
    for (int i = 0; i < n; ++i)
      for (int j : nearest_rows(X, X.row(i), n_neighbors, i))
        if (w(i, j) == 0.0) {
          adj[i].emplace_back(j, 0.0);
          adj[j].emplace_back(i, 0.0);
        }
  }

  std::vector<int> component(static_cast<std::size_t>(n), -1);
  int n_components = 0;
  for (int s = 0; s < n; ++s) {
    if (component[s] >= 0) continue;
    std::vector<int> stack{s};
    component[s] = n_components;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (auto [v, _] : adj[u])
        if (component[v] < 0) {
          component[v] = n_components;
          stack.push_back(v);
        }
    }
    ++n_components;
  }
  if (n_components > 1) {
    fail(ErrorKind::Graph, "neighbour graph is disconnected (" + std::to_string(n_components) +
                               " components); increase n_neighbors");
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd G(n, n);
  for (int s = 0; s < n; ++s) {
    std::vector<double> dist(static_cast<std::size_t>(n), inf);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[s] = 0.0;
    pq.emplace(0.0, s);
    while (!pq.empty()) {
      auto [du, u] = pq.top();
      pq.pop();
      if (du > dist[u]) continue;
      for (auto [v, w] : adj[u]) {
        if (du + w < dist[v]) {
          dist[v] = du + w;
          pq.emplace(dist[v], v);
        }
      }
    }
    for (int t = 0; t < n; ++t) G(s, t) = dist[t];
  }
  G = 0.5 * (G + G.transpose());

  Projection p;
  p.method = Method::ISOMAP;
  p.in_dim = static_cast<int>(X.cols());
  p.out_dim = k;
  classical_embed(G, k, p);
  p.fitted_points = X;
  p.neighbors_k = n_neighbors;
  return p;
}

namespace detail {

constexpr double kOutOfSampleReg = 1e-3;

Eigen::MatrixXd extend_out_of_sample(const Projection& p, const Eigen::MatrixXd& X) {
  if (p.fitted_points.rows() == 0) {
    fail(ErrorKind::Unsupported, "projection was fit from distances only; no out-of-sample rule");
  }
  const int k = std::max(1, std::min<int>(p.neighbors_k, static_cast<int>(p.fitted_points.rows())));
  Eigen::MatrixXd out(X.rows(), p.out_dim);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const Eigen::RowVectorXd x = X.row(r);
    const auto nb = nearest_rows(p.fitted_points, x, k);
    const double nearest = (p.fitted_points.row(nb[0]) - x).norm();
    // An exact hit (up to f32 storage rounding) returns that point's embedding.
    if (nearest <= 1e-6 * std::max(1.0, x.norm())) {
      out.row(r) = p.fitted_embedding.row(nb[0]);
      continue;
    }
    Eigen::MatrixXd N(static_cast<Eigen::Index>(nb.size()), X.cols());
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(nb.size()), p.out_dim);
    for (std::size_t j = 0; j < nb.size(); ++j) {
      N.row(static_cast<Eigen::Index>(j)) = p.fitted_points.row(nb[j]);
      Y.row(static_cast<Eigen::Index>(j)) = p.fitted_embedding.row(nb[j]);
    }
    const Eigen::VectorXd w = reconstruction_weights(x, N, kOutOfSampleReg);
    out.row(r) = w.transpose() * Y;
  }
  return out;
}

}  // namespace detail

}  // namespace mwpkd
