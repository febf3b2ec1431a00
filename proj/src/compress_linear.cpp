#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "compress_internal.hpp"
#include "mwpkd/binary_io.hpp"
#include "mwpkd/compress.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::LINEAR: return "LINEAR";
    case Method::PCA: return "PCA";
    case Method::MDS: return "MDS";
    case Method::LLE: return "LLE";
    case Method::ISOMAP: return "ISOMAP";
    case Method::TSNE2D: return "TSNE2D";
    case Method::PRUNE: return "PRUNE";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "TSNE") upper = "TSNE2D";
  for (Method m : {Method::LINEAR, Method::PCA, Method::MDS, Method::LLE, Method::ISOMAP,
                   Method::TSNE2D, Method::PRUNE}) {
    if (method_name(m) == upper) return m;
  }
  return std::nullopt;
}

namespace detail {

void canonicalize_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > best + 1e-12) {
      best = std::abs(v(i));
      arg = i;
    }
  }
  if (v.size() > 0 && v(arg) < 0) v = -v;
}

TopEigen top_eigenpairs(const Eigen::MatrixXd& sym, int k, bool largest) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) fail(ErrorKind::Numerical, "eigensolver did not converge");
  const auto n = sym.rows();
  TopEigen out;
  out.values.resize(k);
  out.vectors.resize(n, k);
  for (int j = 0; j < k; ++j) {
    // Eigen returns ascending eigenvalues.
    const Eigen::Index src = largest ? n - 1 - j : j;
    out.values(j) = solver.eigenvalues()(src);
    out.vectors.col(j) = solver.eigenvectors().col(src);
  }
  return out;
}

void check_finite(const Eigen::MatrixXd& X, const char* what) {
  if (!X.allFinite()) fail(ErrorKind::NonFinite, std::string(what) + " contains NaN or Inf");
}

}  // namespace detail

Projection fit_pca(const Eigen::MatrixXd& X, int k, bool standardize) {
  const auto n = X.rows();
  const auto d = X.cols();
  if (n < 2) fail(ErrorKind::Param, "PCA needs at least 2 rows");
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, d)) {
    fail(ErrorKind::Param, "PCA target dim " + std::to_string(k) + " outside [1, min(n-1, d)]");
  }
  detail::check_finite(X, "PCA input");
  Projection p;
  p.method = Method::PCA;
  p.in_dim = static_cast<int>(d);
  p.out_dim = k;
  p.mean = X.colwise().mean().transpose();
  Eigen::MatrixXd centered = X.rowwise() - p.mean.transpose();
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(d);
  if (standardize) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double sd = std::sqrt(centered.col(j).squaredNorm() / static_cast<double>(n - 1));
      if (sd > 0.0) scale(j) = 1.0 / sd;
    }
    centered = centered * scale.asDiagonal();
  }
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  auto top = detail::top_eigenpairs(cov, k, true);
  p.eigenvalues = top.values;
  p.components.resize(k, d);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd v = top.vectors.col(j);
    detail::canonicalize_sign(v);
    // Standardization is folded into the components so apply stays (X - mean) * C^T.
    p.components.row(j) = (v.array() * scale.array()).matrix().transpose();
  }
  return p;
}

Projection prune_dims(const Eigen::MatrixXd& X, int k, PruneCriterion criterion) {
  const auto n = X.rows();
  const auto d = X.cols();
  if (k < 1 || k > d) fail(ErrorKind::Param, "prune target dim outside [1, d]");
  if (n < 1) fail(ErrorKind::Param, "prune needs at least one row");
  const Eigen::VectorXd mean = X.colwise().mean().transpose();
  Eigen::VectorXd var(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    var(j) = n > 1 ? (X.col(j).array() - mean(j)).square().sum() / static_cast<double>(n - 1) : 0.0;
  }
  const Eigen::VectorXd absmean = mean.cwiseAbs();
  const auto& primary = criterion == PruneCriterion::VARIANCE ? var : absmean;
  const auto& secondary = criterion == PruneCriterion::VARIANCE ? absmean : var;
  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (primary(a) != primary(b)) return primary(a) > primary(b);
    if (secondary(a) != secondary(b)) return secondary(a) > secondary(b);
    return a < b;
  });
  Projection p;
  p.method = Method::PRUNE;
  p.in_dim = static_cast<int>(d);
  p.out_dim = k;
  p.mean = Eigen::VectorXd::Zero(d);
  p.components = Eigen::MatrixXd::Zero(k, d);
  p.selected_indices.assign(order.begin(), order.begin() + k);
  for (int r = 0; r < k; ++r) p.components(r, p.selected_indices[r]) = 1.0;
  return p;
}

Projection make_linear(const Eigen::MatrixXd& components, const Eigen::VectorXd& mean) {
  if (components.rows() < 1 || components.cols() < 1) fail(ErrorKind::Param, "empty linear map");
  if (mean.size() != components.cols()) fail(ErrorKind::Shape, "linear mean does not match in_dim");
  if (components.rows() > components.cols()) fail(ErrorKind::Param, "out_dim must not exceed in_dim");
  Projection p;
  p.method = Method::LINEAR;
  p.in_dim = static_cast<int>(components.cols());
  p.out_dim = static_cast<int>(components.rows());
  p.components = components;
  p.mean = mean;
  return p;
}

Projection random_linear(int in_dim, int out_dim, std::uint64_t seed) {
  if (out_dim < 1 || in_dim < out_dim) fail(ErrorKind::Param, "need 1 <= out_dim <= in_dim");
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / (in_dim + out_dim));
  Eigen::MatrixXd c(out_dim, in_dim);
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) c(i, j) = rng.uniform(-bound, bound);
  return make_linear(c, Eigen::VectorXd::Zero(in_dim));
}

Eigen::MatrixXd apply_projection(const Projection& p, const Eigen::MatrixXd& X) {
  if (X.cols() != p.in_dim) {
    fail(ErrorKind::Shape, "input has " + std::to_string(X.cols()) + " columns, projection expects " +
                               std::to_string(p.in_dim));
  }
  switch (p.method) {
    case Method::LINEAR:
    case Method::PCA:
      return (X.rowwise() - p.mean.transpose()) * p.components.transpose();
    case Method::PRUNE: {
      Eigen::MatrixXd out(X.rows(), p.out_dim);
      for (int r = 0; r < p.out_dim; ++r) out.col(r) = X.col(p.selected_indices[r]);
      return out;
    }
    case Method::MDS:
    case Method::LLE:
    case Method::ISOMAP:
      return detail::extend_out_of_sample(p, X);
    case Method::TSNE2D:
      fail(ErrorKind::Unsupported, "t-SNE is fit-only and has no out-of-sample extension");
  }
  return {};
}

namespace {

void write_vector(ByteWriter& w, const Eigen::VectorXd& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f32(static_cast<float>(v(i)));
}

Eigen::VectorXd read_vector(ByteReader& r) {
  const auto n = r.u32();
  if (std::uint64_t{n} * 4 > r.remaining()) r.fail_at("truncated vector");
  Eigen::VectorXd v(n);
  for (std::uint32_t i = 0; i < n; ++i) v(i) = r.f32();
  return v;
}

}  // namespace

std::string encode_projection(const Projection& p) {
  ByteWriter w;
  w.bytes("PRJ1");
  w.u32(1);
  w.u8(static_cast<std::uint8_t>(p.method));
  w.u32(static_cast<std::uint32_t>(p.in_dim));
  w.u32(static_cast<std::uint32_t>(p.out_dim));
  write_vector(w, p.mean);
  w.matrix_f32(p.components);
  w.matrix_f32(p.fitted_points);
  w.matrix_f32(p.fitted_embedding);
  w.u32(static_cast<std::uint32_t>(p.neighbors_k));
  w.u32(static_cast<std::uint32_t>(p.selected_indices.size()));
  for (int i : p.selected_indices) w.u32(static_cast<std::uint32_t>(i));
  return w.data();
}

Projection decode_projection(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(4) != "PRJ1") fail(ErrorKind::Format, "bad magic (expected PRJ1) at byte offset 0");
  if (r.u32() != 1) r.fail_at("unsupported PRJ1 version");
  Projection p;
  const auto method = r.u8();
  if (method > static_cast<std::uint8_t>(Method::PRUNE)) r.fail_at("unknown projection method");
  p.method = static_cast<Method>(method);
  p.in_dim = static_cast<int>(r.u32());
  p.out_dim = static_cast<int>(r.u32());
  p.mean = read_vector(r);
  p.components = r.matrix_f32();
  p.fitted_points = r.matrix_f32();
  p.fitted_embedding = r.matrix_f32();
  p.neighbors_k = static_cast<int>(r.u32());
  const auto n_sel = r.u32();
  if (std::uint64_t{n_sel} * 4 > r.remaining()) r.fail_at("truncated selected_indices");
  for (std::uint32_t i = 0; i < n_sel; ++i) p.selected_indices.push_back(static_cast<int>(r.u32()));
  if (!r.at_end()) r.fail_at("trailing bytes");
  if (p.out_dim < 1 || p.out_dim > p.in_dim) fail(ErrorKind::Format, "invalid projection dims");
  return p;
}

void save_projection(const Projection& p, const std::filesystem::path& path) {
  atomic_write(path, encode_projection(p));
}

Projection load_projection(const std::filesystem::path& path) {
  return decode_projection(read_file(path));
}

}  // namespace mwpkd
