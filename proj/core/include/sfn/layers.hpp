#pragma once

#include <string>
#include <vector>

#include "sfn/ops.hpp"
#include "sfn/tensor.hpp"

namespace sfn {

/// A tensor reachable by name for optimizers, checkpoints and freezing.
/// Buffers (batch-norm running statistics) are listed with trainable=false.
struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

using ParamList = std::vector<NamedTensor>;

/// N(0, stddev^2) entries.
Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad = true);

/// Row-vector convention: y = x W + b with W [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  /// x is [m x in]; returns [m x out].
  [[nodiscard]] Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv1d {
  Tensor kernel;  // [C_out x C_in x kw]
  Tensor bias;    // [C_out]

  static Conv1d init(std::size_t channels_out, std::size_t channels_in, std::size_t width, Rng& rng);
  static Conv1d zeros(std::size_t channels_out, std::size_t channels_in, std::size_t width);
  [[nodiscard]] Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNorm1d {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;

  static BatchNorm1d init(std::size_t channels);
  Tensor operator()(const Tensor& x, bool train);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Independent deep copy of every tensor in `params` (values only).
std::vector<Tensor> snapshot(const ParamList& params);

}  // namespace sfn
