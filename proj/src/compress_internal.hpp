#pragma once

#include <Eigen/Core>

#include "mwpkd/compress.hpp"

namespace mwpkd::detail {

// Flip so the largest-magnitude entry is positive.
void canonicalize_sign(Eigen::Ref<Eigen::VectorXd> v);

struct TopEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns
};
// Top-k (largest) or bottom-k (smallest) eigenpairs of a symmetric matrix.
TopEigen top_eigenpairs(const Eigen::MatrixXd& sym, int k, bool largest);

void check_finite(const Eigen::MatrixXd& X, const char* what);

Eigen::MatrixXd extend_out_of_sample(const Projection& p, const Eigen::MatrixXd& X);

}  // namespace mwpkd::detail
