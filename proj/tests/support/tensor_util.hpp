#pragma once

#include <random>
#include <vector>

#include "oracles.hpp"
#include "sfn/layers.hpp"
#include "sfn/tensor.hpp"

namespace testutil {

inline sfn::Tensor random_tensor(sfn::Shape shape, sfn::Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> n(0.0, stddev);
  std::vector<double> v(sfn::shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return sfn::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline oracle::Matrix to_matrix(const sfn::Tensor& t) {
  const std::vector<double> flat(t.data().begin(), t.data().end());
  return oracle::from_flat(flat, t.dim(0), t.numel() / t.dim(0));
}

inline std::vector<double> values(const sfn::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const oracle::Matrix& a, const sfn::Tensor& b) {
  double worst = 0.0;
  const std::size_t cols = b.numel() / b.dim(0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b.data()[i * cols + j]));
  return worst;
}

/// Adds N(0, stddev^2) to every trainable parameter.
inline void perturb(const sfn::ParamList& params, sfn::Rng& rng, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  for (const auto& p : params)
    if (p.trainable)
      for (double& v : p.tensor.impl().data) v += n(rng);
}

}  // namespace testutil
