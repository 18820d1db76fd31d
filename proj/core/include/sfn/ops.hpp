#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "sfn/tensor.hpp"

namespace sfn {

using Rng = std::mt19937_64;

/// Additive mask value for excluded attention entries.
inline constexpr double kMaskValue = -1e30;
/// Scores at or below this are treated as masked.
inline constexpr double kMaskThreshold = -1e29;

/// Per-channel running statistics owned by a batch-norm layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState fresh(std::size_t channels);
};

namespace ops {

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor frobenius(const Tensor& a, const Tensor& b);

// Elementwise, same-shape operands.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
/// factor * a + shift
Tensor affine(const Tensor& a, double factor, double shift);
Tensor square(const Tensor& a);
/// Subgradient 0 at the origin.
Tensor abs(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);

// Broadcasting forms the layers need.
/// a * s where s holds a single value.
Tensor scale_by(const Tensor& a, const Tensor& s);
/// a[m x n] + bias[n] on every row.
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
/// a[m x n] with row i multiplied by s[i].
Tensor scale_rows(const Tensor& a, const Tensor& s);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over `axis`; the axis is removed from the result shape.
Tensor mean(const Tensor& a, std::size_t axis);

// Structure.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
/// a[index, ...] with the leading axis dropped.
Tensor select(const Tensor& a, std::size_t index);
/// New leading axis.
Tensor stack(const std::vector<Tensor>& parts);
/// Values of `a` without a gradient path.
Tensor detach(const Tensor& a);

/// Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction.
/// Throws DegenerateRowError when every entry of a row is masked.
Tensor softmax_rows(const Tensor& a);

/// Same-padded cross-correlation. x is [C_in x T] or [B x C_in x T], kernel
/// is [C_out x C_in x kw] with kw odd, bias is [C_out].
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Per-channel normalization over batch and time. x is [C x T] or
/// [B x C x T]. Training mode uses batch statistics and updates `state`;
/// eval mode is a fixed affine map from the running statistics.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool train);

/// Kernel 2, stride 2 average pooling over the last axis. A trailing odd
/// element is carried through unchanged.
Tensor avgpool1d(const Tensor& x);

/// Inverted dropout; identity when !train or p == 0.
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);

/// Forward: one-hot of argmax(soft). Backward: identity into `soft`.
Tensor straight_through_onehot(const Tensor& soft);

}  // namespace ops
}  // namespace sfn
