#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "mwpkd/compress.hpp"
#include "mwpkd/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace mwpkd {
namespace {

using testing::max_abs_up_to_sign;
using testing::oracle_pca_scores;

Eigen::MatrixXd gaussian(int n, int d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.normal() * scale;
  return X;
}

TEST(Pca, MatchesBruteForceOracle) {
  for (int inst = 0; inst < 5; ++inst) {
    // Distinct spread per column keeps the eigenvalues separated.
    Eigen::MatrixXd X = gaussian(60, 6, 100 + inst);
    for (int j = 0; j < 6; ++j) X.col(j) *= 1.0 + j;
    const auto p = fit_pca(X, 4);
    EXPECT_LT(max_abs_up_to_sign(apply_projection(p, X), oracle_pca_scores(X, 4)), 1e-8);
  }
}

TEST(Pca, CollinearPointsOnSlopeTwo) {
  Eigen::MatrixXd X(3, 2);
  X << 0, 0, 1, 2, 2, 4;
  const auto p = fit_pca(X, 1);
  EXPECT_NEAR(p.components(0, 0), 1.0 / std::sqrt(5.0), 1e-12);
  EXPECT_NEAR(p.components(0, 1), 2.0 / std::sqrt(5.0), 1e-12);
  const auto full = fit_pca(X, 1);
  EXPECT_GT(full.eigenvalues(0), 0.0);
  Eigen::MatrixXd X3(3, 2);
  X3 << 0, 0, 1, 2, 2, 4;
  const Eigen::MatrixXd cov = (X3.rowwise() - X3.colwise().mean()).transpose() *
                              (X3.rowwise() - X3.colwise().mean()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-12);
}

TEST(Pca, DiagonalLineCoordinates) {
  Eigen::MatrixXd X(3, 2);
  X << 0, 0, 1, 1, 2, 2;
  const auto y = apply_projection(fit_pca(X, 1), X);
  const double s = y(0, 0) < 0 ? 1.0 : -1.0;
  EXPECT_NEAR(s * y(0, 0), -std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(s * y(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(s * y(2, 0), std::sqrt(2.0), 1e-12);
}

TEST(Pca, FullRankPreservesDistancesAndReconstructs) {
  const Eigen::MatrixXd X = gaussian(40, 5, 7);
  const auto p = fit_pca(X, 5);
  const Eigen::MatrixXd Y = apply_projection(p, X);
  EXPECT_LT((pairwise_distances(X) - pairwise_distances(Y)).cwiseAbs().maxCoeff(), 1e-9);
  const Eigen::MatrixXd back = Y * p.components;
  EXPECT_LT((back - (X.rowwise() - p.mean.transpose())).cwiseAbs().maxCoeff(), 1e-8);
  const Eigen::MatrixXd gram = p.components * p.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
  for (int r = 0; r < 5; ++r) {
    Eigen::Index arg;
    p.components.row(r).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(p.components(r, arg), 0.0);
  }
}

TEST(Pca, MeanRowMapsToZeroAndErrors) {
  const Eigen::MatrixXd X = gaussian(20, 4, 3);
  const auto p = fit_pca(X, 2);
  const Eigen::MatrixXd m = X.colwise().mean();
  EXPECT_LT(apply_projection(p, m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW_KIND(fit_pca(X, 5), ErrorKind::Param);
  EXPECT_THROW_KIND(fit_pca(X, 0), ErrorKind::Param);
  EXPECT_THROW_KIND(apply_projection(p, Eigen::MatrixXd::Zero(2, 3)), ErrorKind::Shape);
}

TEST(Pca, StandardizeLeavesZeroVarianceColumnsAlone) {
  Eigen::MatrixXd X = gaussian(30, 3, 4);
  X.col(0) *= 100.0;
  X.col(2).setConstant(5.0);
  const auto p = fit_pca(X, 2, true);
  EXPECT_TRUE(p.components.allFinite());
  // After standardization, no single column dominates the first component.
  EXPECT_LT(std::abs(p.components(0, 0)) * 10.0, 1.0);
}

TEST(Linear, IdentityIsPassThrough) {
  const Eigen::MatrixXd X = gaussian(5, 4, 1);
  const auto p = make_linear(Eigen::MatrixXd::Identity(4, 4), Eigen::VectorXd::Zero(4));
  EXPECT_EQ(apply_projection(p, X), X);
}

TEST(Mds, RecoversOneDimensionalPoints) {
  Eigen::MatrixXd D(3, 3);
  D << 0, 1, 3, 1, 0, 2, 3, 2, 0;
  const auto p = fit_classical_mds_distances(D, 1);
  EXPECT_LT((pairwise_distances(p.fitted_embedding) - D).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(p.clamped_eigenvalues, 0);
}

TEST(Mds, IdenticalPointsGiveZeroEmbedding) {
  const auto p = fit_classical_mds_distances(Eigen::MatrixXd::Zero(4, 4), 2);
  EXPECT_EQ(p.fitted_embedding.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mds, EuclideanDistancesEmbedExactly) {
  const Eigen::MatrixXd X = gaussian(12, 5, 9);
  const Eigen::MatrixXd D = pairwise_distances(X);
  const auto p = fit_classical_mds_distances(D, 11);
  EXPECT_LT(kruskal_stress(D, p.fitted_embedding), 1e-9);
}

TEST(Mds, NonEuclideanClampsAndSmacofDoesNotIncreaseStress) {
  Rng rng(5);
  const int n = 10;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) D(i, j) = D(j, i) = rng.uniform(1.0, 5.0);
  const auto classical = fit_classical_mds_distances(D, 9);
  EXPECT_GT(classical.clamped_eigenvalues, 0);
  EXPECT_FALSE(classical.warnings.empty());
  MdsOptions opts;
  opts.smacof = true;
  const auto refined = fit_classical_mds_distances(D, 2, opts);
  const auto base = fit_classical_mds_distances(D, 2);
  EXPECT_LE(kruskal_stress(D, refined.fitted_embedding), kruskal_stress(D, base.fitted_embedding) + 1e-12);
}

TEST(Mds, RejectsBadInput) {
  Eigen::MatrixXd D(2, 2);
  D << 0, 1, 2, 0;
  EXPECT_THROW_KIND(fit_classical_mds_distances(D, 1), ErrorKind::Param);
  EXPECT_THROW_KIND(fit_classical_mds_distances(Eigen::MatrixXd::Zero(3, 3), 3), ErrorKind::Param);
  const auto p = fit_classical_mds_distances(Eigen::MatrixXd::Zero(3, 3), 1);
  EXPECT_THROW_KIND(apply_projection(p, Eigen::MatrixXd::Zero(1, 3)), ErrorKind::Unsupported);
}

Eigen::MatrixXd line3d(int n) {
  Eigen::MatrixXd X(n, 3);
  const Eigen::RowVector3d dir(1.0, -2.0, 0.5);
  for (int i = 0; i < n; ++i) X.row(i) = Eigen::RowVector3d(0.3, 1.0, -2.0) + (i + 0.1 * (i % 3)) * dir;
  return X;
}

TEST(Lle, WeightsSumToOne) {
  const Eigen::MatrixXd X = gaussian(20, 4, 11);
  for (int i = 0; i < 20; ++i) {
    const auto nb = nearest_rows(X, X.row(i), 5, i);
    Eigen::MatrixXd N(5, 4);
    for (int j = 0; j < 5; ++j) N.row(j) = X.row(nb[j]);
    EXPECT_NEAR(reconstruction_weights(X.row(i), N, 1e-3).sum(), 1.0, 1e-10);
  }
}

TEST(Lle, LineIsMonotone) {
  const auto p = fit_lle(line3d(30), 1, 2);
  const Eigen::VectorXd y = p.fitted_embedding.col(0);
  const double sign = y(29) > y(0) ? 1.0 : -1.0;
  for (int i = 1; i < 30; ++i) EXPECT_GT(sign * (y(i) - y(i - 1)), 0.0) << i;
}

TEST(Lle, NeighborCountErrorsAndWarning) {
  const Eigen::MatrixXd X = gaussian(10, 3, 2);
  EXPECT_THROW_KIND(fit_lle(X, 1, 10), ErrorKind::Neighbor);
  EXPECT_THROW_KIND(fit_lle(X, 1, 0), ErrorKind::Neighbor);
  EXPECT_FALSE(fit_lle(X, 3, 2).warnings.empty());
}

TEST(Isomap, QuarterCircleArcLength) {
  const int n = 50;
  Eigen::MatrixXd X(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = std::numbers::pi / 2.0 * i / (n - 1);
    X(i, 0) = std::cos(t);
    X(i, 1) = std::sin(t);
  }
  const auto p = fit_isomap(X, 1, 3);
  const double arc = std::numbers::pi / 2.0 / (n - 1);
  const double chord = 2.0 * std::sin(arc / 2.0);
  for (int i = 1; i < n; ++i) {
    const double gap = std::abs(p.fitted_embedding(i, 0) - p.fitted_embedding(i - 1, 0));
    EXPECT_NEAR(gap, chord, 0.05 * arc) << i;
  }
}

TEST(Isomap, CollinearMatchesPca) {
  const Eigen::MatrixXd X = line3d(25);
  const auto iso = fit_isomap(X, 1, 3);
  const Eigen::MatrixXd pca = apply_projection(fit_pca(X, 1), X);
  EXPECT_LT(max_abs_up_to_sign(iso.fitted_embedding, pca), 1e-6);
}

TEST(Isomap, DisconnectedGraphReportsComponents) {
  Eigen::MatrixXd X(6, 2);
  X << 0, 0, 0.1, 0, 0.2, 0, 100, 0, 100.1, 0, 100.2, 0;
  try {
    fit_isomap(X, 1, 1);
    FAIL() << "expected GraphError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Graph);
    EXPECT_NE(std::string(e.what()).find("2 components"), std::string::npos) << e.what();
  }
}

TEST(OutOfSample, CoincidentPointReturnsFittedEmbedding) {
  const Eigen::MatrixXd X = gaussian(40, 5, 21);
  for (const auto& p : {fit_lle(X, 2, 6), fit_isomap(X, 2, 8), fit_classical_mds(X, 2)}) {
    const Eigen::MatrixXd y = apply_projection(p, X);
    EXPECT_LT((y - p.fitted_embedding).cwiseAbs().maxCoeff(), 1e-8) << method_name(p.method);
  }
}

TEST(OutOfSample, NewPointIsNeighbourCombination) {
  const Eigen::MatrixXd X = line3d(20);
  const auto p = fit_isomap(X, 1, 3);
  const Eigen::MatrixXd mid = 0.5 * (X.row(4) + X.row(5));
  const double y = apply_projection(p, mid)(0, 0);
  const double a = p.fitted_embedding(4, 0);
  const double b = p.fitted_embedding(5, 0);
  EXPECT_GT(y, std::min(a, b) - 1e-6);
  EXPECT_LT(y, std::max(a, b) + 1e-6);
}

TEST(Tsne, AffinitiesMatchPerplexity) {
  const Eigen::MatrixXd X = gaussian(40, 3, 5);
  const auto aff = tsne_affinities(X, 10.0);
  for (int i = 0; i < 40; ++i) {
    EXPECT_NEAR(aff.entropy(i), std::log(10.0), 1e-4);
    EXPECT_NEAR(aff.conditional.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(Tsne, DeterministicAndSeparatesClusters) {
  Eigen::MatrixXd X = gaussian(60, 4, 17);
  X.bottomRows(30).col(0).array() += 20.0;
  TsneOptions opts;
  opts.perplexity = 10.0;
  opts.seed = 4;
  const auto a = fit_tsne2d(X, opts);
  const auto b = fit_tsne2d(X, opts);
  EXPECT_EQ(a.fitted_embedding, b.fitted_embedding);
  const Eigen::MatrixXd& Y = a.fitted_embedding;
  const Eigen::RowVector2d c1 = Y.topRows(30).colwise().mean();
  const Eigen::RowVector2d c2 = Y.bottomRows(30).colwise().mean();
  double spread = 0.0;
  for (int i = 0; i < 30; ++i) spread += (Y.row(i) - c1).norm() + (Y.row(30 + i) - c2).norm();
  spread /= 60.0;
  EXPECT_GT((c1 - c2).norm(), 3.0 * spread);
  EXPECT_THROW_KIND(apply_projection(a, X), ErrorKind::Unsupported);
}

TEST(Tsne, PerplexityAtLeastNIsParamError) {
  TsneOptions opts;
  opts.perplexity = 10.0;
  EXPECT_THROW_KIND(fit_tsne2d(gaussian(10, 2, 1), opts), ErrorKind::Param);
  opts.perplexity = 3.0;
  opts.iters = 0;
  EXPECT_THROW_KIND(fit_tsne2d(gaussian(10, 2, 1), opts), ErrorKind::Param);
}

TEST(Prune, ApplyEqualsColumnSelection) {
  Eigen::MatrixXd X = gaussian(30, 6, 8);
  X.col(0).setZero();
  X.col(3) *= 10.0;
  const auto p = prune_dims(X, 3);
  EXPECT_EQ(p.selected_indices[0], 3);
  EXPECT_EQ(std::count(p.selected_indices.begin(), p.selected_indices.end(), 0), 0);
  const Eigen::MatrixXd Y = apply_projection(p, X);
  for (int r = 0; r < 3; ++r) EXPECT_EQ(Y.col(r), X.col(p.selected_indices[r]));
  for (int r = 0; r < 3; ++r) EXPECT_EQ(p.components.row(r).sum(), 1.0);
  const auto all = prune_dims(X, 6);
  std::vector<int> sorted = all.selected_indices;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW_KIND(prune_dims(X, 7), ErrorKind::Param);
}

TEST(Prune, TiesBrokenByOtherCriterionThenIndex) {
  Eigen::MatrixXd X(2, 3);
  X << 0, 5, 1, 2, 7, 3;  // all variances 2; abs means 1, 6, 2
  const auto p = prune_dims(X, 3);
  EXPECT_EQ(p.selected_indices, (std::vector<int>{1, 2, 0}));
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(2, 3);
  EXPECT_EQ(prune_dims(Z, 2).selected_indices, (std::vector<int>{0, 1}));
}

TEST(Projection, BinaryRoundTrip) {
  const Eigen::MatrixXd X = gaussian(20, 4, 3);
  for (const auto& p : {fit_pca(X, 2), fit_lle(X, 2, 5), prune_dims(X, 2)}) {
    const auto q = decode_projection(encode_projection(p));
    EXPECT_EQ(q.method, p.method);
    EXPECT_EQ(q.neighbors_k, p.neighbors_k);
    EXPECT_EQ(q.selected_indices, p.selected_indices);
    EXPECT_LT((apply_projection(q, X) - apply_projection(p, X)).cwiseAbs().maxCoeff(), 1e-4);
  }
  std::string bytes = encode_projection(fit_pca(X, 2));
  bytes.pop_back();
  EXPECT_THROW_KIND(decode_projection(bytes), ErrorKind::Format);
}

TEST(DimStats, MonteCarloStandardNormal) {
  const Eigen::MatrixXd X = gaussian(10000, 3, 99);
  const auto s = dim_stats(X);
  for (int j = 0; j < 3; ++j) {
    EXPECT_NEAR(s.per_dim_mean(j), 0.0, 0.05);
    EXPECT_NEAR(s.per_dim_var(j), 1.0, 0.05);
  }
  EXPECT_TRUE(s.approx_normal);
  std::int64_t total = 0;
  for (auto c : s.histogram) total += c;
  EXPECT_EQ(total, 30000);
  EXPECT_EQ(s.pooled_count, 30000);
}

TEST(DimStats, ConstantMatrixFlagged) {
  const auto s = dim_stats(Eigen::MatrixXd::Constant(10, 4, 2.5));
  EXPECT_EQ(s.per_dim_var.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(std::count(s.constant_dims.begin(), s.constant_dims.end(), true), 4);
  EXPECT_FALSE(s.approx_normal);
}

TEST(DimStats, SkewedDataIsNotNormal) {
  Eigen::MatrixXd X = gaussian(5000, 2, 3);
  X = X.array().exp();
  EXPECT_FALSE(dim_stats(X).approx_normal);
}

TEST(Gap, IdentityScaleAndErrors) {
  const Eigen::MatrixXd X = gaussian(15, 6, 12);
  EXPECT_NEAR(self_similarity_gap(X, X), 0.0, 1e-12);
  EXPECT_NEAR(self_similarity_gap(X, 3.5 * X), 0.0, 1e-12);
  const double g = self_similarity_gap(X, gaussian(15, 2, 13));
  EXPECT_GE(g, 0.0);
  EXPECT_LE(g, 2.0);
  EXPECT_THROW_KIND(self_similarity_gap(X, gaussian(14, 2, 1)), ErrorKind::Shape);
  Eigen::MatrixXd Z = X;
  Z.row(3).setZero();
  EXPECT_THROW_KIND(self_similarity_gap(Z, X), ErrorKind::ZeroVector);
}

}  // namespace
}  // namespace mwpkd
