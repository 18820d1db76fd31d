#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfn {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when operand shapes are incompatible with an operator.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown on invalid hyperparameters or layer configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an API precondition is violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown by softmax when a row has no finite entry left after masking.
class DegenerateRowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

/// Dense row-major double tensor.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the autograd tape route gradients back to parameters. Use clone() for
/// an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t numel() const { return impl().data.size(); }

  [[nodiscard]] std::span<const double> data() const { return impl().data; }
  [[nodiscard]] std::span<double> data() { return impl().data; }
  [[nodiscard]] double item() const;
  [[nodiscard]] double at(std::size_t row, std::size_t col) const;
  [[nodiscard]] double& at(std::size_t row, std::size_t col);

  [[nodiscard]] bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool value) { impl().requires_grad = value; }
  [[nodiscard]] bool has_grad() const { return !impl().grad.empty(); }
  /// Gradient values; all zeros when no gradient has been accumulated yet.
  [[nodiscard]] std::vector<double> grad() const;
  [[nodiscard]] std::span<double> grad_buffer();
  void zero_grad();

  /// Deep copy of values only; the result is a fresh leaf.
  [[nodiscard]] Tensor clone() const;
  /// Same values under a new shape (deep copy, no graph).
  [[nodiscard]] Tensor reshaped_copy(Shape shape) const;

  [[nodiscard]] TensorImpl& impl() const;
  [[nodiscard]] const std::shared_ptr<TensorImpl>& handle() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor_from_impl(std::shared_ptr<TensorImpl> impl);

  std::shared_ptr<TensorImpl> impl_;
};

Tensor make_tensor_from_impl(std::shared_ptr<TensorImpl> impl);

/// True when both tensors have equal shape and bit-identical values.
bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace sfn
