#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sfn/tensor.hpp"

namespace sfn {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so coordinates whose true
  /// gradient is ~0 are judged on absolute error instead.
  double magnitude_floor = 1e-3;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
  /// "leaf[i] coord j: analytic a vs numeric n" for the worst coordinate.
  std::string worst;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// finite differences for every coordinate of every leaf.
///
/// `f` must rebuild its forward pass from the current leaf values on each
/// call. Two evaluations that disagree raise ContractError.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                           const GradCheckOptions& options = {});

}  // namespace sfn
