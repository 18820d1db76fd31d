#include "sfn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace sfn {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t m = rows.size();
  const std::size_t n = m == 0 ? 0 : rows.begin()->size();
  std::vector<double> values;
  values.reserve(m * n);
  for (const auto& row : rows) {
    if (row.size() != n) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{m, n}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(s));
  }
  return s[axis];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return impl().data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2) throw DimensionError("at(row, col) needs a 2-D tensor");
  return impl().data[row * s[1] + col];
}

double& Tensor::at(std::size_t row, std::size_t col) {
  const auto& s = shape();
  if (s.size() != 2) throw DimensionError("at(row, col) needs a 2-D tensor");
  return impl().data[row * s[1] + col];
}

std::vector<double> Tensor::grad() const {
  const auto& g = impl().grad;
  if (g.empty()) return std::vector<double>(numel(), 0.0);
  return g;
}

std::span<double> Tensor::grad_buffer() {
  auto& t = impl();
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(shape(), impl().data); }

Tensor Tensor::reshaped_copy(Shape shape) const { return Tensor(std::move(shape), impl().data); }

Tensor make_tensor_from_impl(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data();
  const auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  double m = 0.0;
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace sfn
