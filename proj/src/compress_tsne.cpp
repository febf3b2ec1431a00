#include <cmath>
#include <limits>

#include "compress_internal.hpp"
#include "mwpkd/compress.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

Affinities tsne_affinities(const Eigen::MatrixXd& X, double perplexity, double tol) {
  const auto n = X.rows();
  if (!(perplexity > 0.0) || perplexity >= static_cast<double>(n)) {
    fail(ErrorKind::Param, "perplexity must be in (0, n)");
  }
  Eigen::MatrixXd D2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) D2(i, j) = (X.row(i) - X.row(j)).squaredNorm();

  const double target = std::log(perplexity);
  Affinities out;
  out.conditional = Eigen::MatrixXd::Zero(n, n);
  out.entropy.resize(n);
  Eigen::VectorXd row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0;
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double h = 0.0;
    for (int it = 0; it < 200; ++it) {
      // Shift by the smallest off-diagonal distance to avoid underflow.
      double dmin = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) dmin = std::min(dmin, D2(i, j));
      double sum = 0.0;
      double weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * (D2(i, j) - dmin));
        sum += row(j);
        weighted += row(j) * (D2(i, j) - dmin);
      }
      h = std::log(sum) + beta * weighted / sum;
      row /= sum;
      const double diff = h - target;
      if (std::abs(diff) < tol) break;
      if (diff > 0.0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    out.conditional.row(i) = row.transpose();
    out.entropy(i) = h;
  }
  return out;
}

Projection fit_tsne2d(const Eigen::MatrixXd& X, const TsneOptions& opts) {
  detail::check_finite(X, "t-SNE input");
  const auto n = X.rows();
  if (n < 2) fail(ErrorKind::Param, "t-SNE needs at least 2 rows");
  if (opts.perplexity >= static_cast<double>(n)) {
    fail(ErrorKind::Param, "perplexity " + std::to_string(opts.perplexity) + " must be below n=" +
                               std::to_string(n));
  }
  if (opts.iters < 1) fail(ErrorKind::Param, "t-SNE iters must be >= 1");

  const Affinities aff = tsne_affinities(X, opts.perplexity);
  Eigen::MatrixXd P = aff.conditional + aff.conditional.transpose();
  P /= P.sum();
  P = P.cwiseMax(1e-12);

  Rng rng(opts.seed);
  Eigen::MatrixXd Y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) Y(i, c) = rng.normal() * 1e-4;
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  Eigen::MatrixXd grad(n, 2);

  for (int it = 0; it < opts.iters; ++it) {
    const double exag = it < opts.exaggeration_iters ? opts.exaggeration : 1.0;
    const double momentum = it < opts.momentum_switch_iter ? opts.initial_momentum : opts.final_momentum;
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double q = 1.0 / (1.0 + (Y.row(i) - Y.row(j)).squaredNorm());
        num(i, j) = q;
        num(j, i) = q;
        z += 2.0 * q;
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / z, 1e-12);
        const double coeff = 4.0 * (exag * P(i, j) - q) * num(i, j);
        grad.row(i) += coeff * (Y.row(i) - Y.row(j));
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0.0) == (velocity(i, c) > 0.0);
        gains(i, c) = same ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        velocity(i, c) = momentum * velocity(i, c) - opts.learning_rate * gains(i, c) * grad(i, c);
      }
    }
    Y += velocity;
    Y = Y.rowwise() - Y.colwise().mean();
  }
  if (!Y.allFinite()) fail(ErrorKind::NonFinite, "t-SNE diverged");

  Projection p;
  p.method = Method::TSNE2D;
  p.in_dim = static_cast<int>(X.cols());
  p.out_dim = 2;
  p.fitted_embedding = Y;
  return p;
}

}  // namespace mwpkd
