#include <algorithm>
#include <cmath>

#include "mwpkd/compress.hpp"
#include "mwpkd/error.hpp"

namespace mwpkd {

DimStats dim_stats(const Eigen::MatrixXd& X) {
  const auto n = X.rows();
  const auto d = X.cols();
  DimStats s;
  s.per_dim_mean = n > 0 ? Eigen::VectorXd(X.colwise().mean().transpose()) : Eigen::VectorXd::Zero(d);
  s.per_dim_var = Eigen::VectorXd::Zero(d);
  s.constant_dims.assign(static_cast<std::size_t>(d), true);
  for (Eigen::Index j = 0; j < d; ++j) {
    if (n > 1) {
      s.per_dim_var(j) = (X.col(j).array() - s.per_dim_mean(j)).square().sum() / static_cast<double>(n - 1);
    }
    const double m = s.per_dim_mean(j);
    s.constant_dims[j] = !(s.per_dim_var(j) > 1e-20 * std::max(1.0, m * m));
  }

  double m3 = 0.0;
  double m4 = 0.0;
  std::int64_t count = 0;
  const double width = 2.0 * kHistogramRange / kHistogramBins;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (s.constant_dims[j]) continue;
    const double mean = s.per_dim_mean(j);
    const double sd = std::sqrt((X.col(j).array() - mean).square().sum() / static_cast<double>(n));
    if (!(sd > 0.0)) continue;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double z = (X(i, j) - mean) / sd;
      m3 += z * z * z;
      m4 += z * z * z * z;
      auto bin = static_cast<long>(std::floor((z + kHistogramRange) / width));
      bin = std::clamp<long>(bin, 0, kHistogramBins - 1);
      ++s.histogram[static_cast<std::size_t>(bin)];
      ++count;
    }
  }
  s.pooled_count = count;
  if (count > 0) {
    s.pooled_skewness = m3 / static_cast<double>(count);
    s.pooled_excess_kurtosis = m4 / static_cast<double>(count) - 3.0;
    s.approx_normal = std::abs(s.pooled_skewness) < 0.5 && std::abs(s.pooled_excess_kurtosis) < 1.0;
  }
  return s;
}

double self_similarity_gap(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() != Y.rows()) {
    fail(ErrorKind::Shape, "row counts differ: " + std::to_string(X.rows()) + " vs " + std::to_string(Y.rows()));
  }
  const auto n = X.rows();
  if (n == 0) return 0.0;
  auto normalize = [](const Eigen::MatrixXd& M, const char* what) {
    Eigen::MatrixXd out = M;
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      const double norm = M.row(i).norm();
      if (!(norm > 0.0)) fail(ErrorKind::ZeroVector, std::string(what) + " row " + std::to_string(i) + " is zero");
      out.row(i) /= norm;
    }
    return out;
  };
  const Eigen::MatrixXd xn = normalize(X, "X");
  const Eigen::MatrixXd yn = normalize(Y, "Y");
  const Eigen::MatrixXd cx = xn * xn.transpose();
  const Eigen::MatrixXd cy = yn * yn.transpose();
  return (cx - cy).cwiseAbs().sum() / static_cast<double>(n * n);
}

}  // namespace mwpkd
