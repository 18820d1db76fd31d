#include "sfn/layers.hpp"

#include <cmath>

namespace sfn {

Tensor randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return Linear{randn({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
                Tensor(Shape{out}, 0.0, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return Linear{Tensor(Shape{in, out}, 0.0, true), Tensor(Shape{out}, 0.0, true)};
}

Tensor Linear::operator()(const Tensor& x) const {
  return ops::add_row_bias(ops::matmul(x, weight), bias);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, true});
  out.push_back({prefix + ".bias", bias, true});
}

Conv1d Conv1d::init(std::size_t channels_out, std::size_t channels_in, std::size_t width, Rng& rng) {
  // He-style scale for the GELU that follows.
  const double fan_in = static_cast<double>(channels_in * width);
  return Conv1d{randn({channels_out, channels_in, width}, std::sqrt(2.0 / fan_in), rng),
                Tensor(Shape{channels_out}, 0.0, true)};
}

Conv1d Conv1d::zeros(std::size_t channels_out, std::size_t channels_in, std::size_t width) {
  return Conv1d{Tensor(Shape{channels_out, channels_in, width}, 0.0, true),
                Tensor(Shape{channels_out}, 0.0, true)};
}

Tensor Conv1d::operator()(const Tensor& x) const { return ops::conv1d(x, kernel, bias); }

void Conv1d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".kernel", kernel, true});
  out.push_back({prefix + ".bias", bias, true});
}

BatchNorm1d BatchNorm1d::init(std::size_t channels) {
  return BatchNorm1d{Tensor(Shape{channels}, 1.0, true), Tensor(Shape{channels}, 0.0, true),
                     BatchNormState::fresh(channels)};
}

Tensor BatchNorm1d::operator()(const Tensor& x, bool train) {
  return ops::batchnorm1d(x, gamma, beta, state, train);
}

void BatchNorm1d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", state.running_mean, false});
  out.push_back({prefix + ".running_var", state.running_var, false});
}

std::vector<Tensor> snapshot(const ParamList& params) {
  std::vector<Tensor> copies;
  copies.reserve(params.size());
  for (const auto& p : params) copies.push_back(p.tensor.clone());
  return copies;
}

}  // namespace sfn
