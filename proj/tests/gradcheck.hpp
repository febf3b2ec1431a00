#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Core>

#include "mwpkd/rng.hpp"

namespace mwpkd::testing {

struct GradCheckResult {
  double worst_rel = 0.0;
  int checked = 0;
  std::string worst_where;
};

// Central differences on `samples` random coordinates of `tensor` (all of them
// when the tensor is smaller). The relative error denominator is floored at
// `floor` so coordinates with vanishing gradients compare absolutely.
inline void grad_check_tensor(const std::string& name, Eigen::MatrixXd& tensor, const Eigen::MatrixXd& analytic,
                              const std::function<double()>& loss, Rng& rng, GradCheckResult& out,
                              int samples = 20, double h = 1e-5, double floor = 1e-6) {
  const auto total = tensor.size();
  const int count = static_cast<int>(std::min<Eigen::Index>(total, samples));
  for (int s = 0; s < count; ++s) {
    const Eigen::Index flat = total <= samples ? s : static_cast<Eigen::Index>(rng.uniform_int(0, total - 1));
    double& x = tensor.data()[flat];
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.data()[flat];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    ++out.checked;
    if (rel > out.worst_rel) {
      out.worst_rel = rel;
      out.worst_where = name + "[" + std::to_string(flat) + "] analytic=" + std::to_string(a) +
                        " numeric=" + std::to_string(numeric);
    }
  }
}

}  // namespace mwpkd::testing
