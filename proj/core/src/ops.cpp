#include "sfn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sfn/graph.hpp"

namespace sfn {

BatchNormState BatchNormState::fresh(std::size_t channels) {
  return BatchNormState{Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)};
}

namespace ops {
namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (active_graph() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool recording(const std::vector<Tensor>& inputs) {
  if (active_graph() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

// Empty span when the tensor does not take gradients.
std::span<double> grad_of(const ImplPtr& t) {
  if (!t->requires_grad) return {};
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return t->grad;
}

template <class MakeBackward>
Tensor emit(Shape shape, std::vector<double> values, bool record, MakeBackward&& make_backward) {
  Tensor out(std::move(shape), std::move(values));
  if (record) {
    out.set_requires_grad(true);
    active_graph()->record(out.handle(), make_backward(out.handle()));
  }
  return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_to_string(a.shape()));
  }
}

// Unary elementwise op with derivative computed from (input, output).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return emit(a.shape(), std::move(y), recording({&a}), [ai = a.handle(), deriv](const ImplPtr& out) {
    return [ai, out, deriv](std::span<const double> g) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(ai->data[i], out->data[i]);
    };
  });
}

// [outer, axis, inner] factorization of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// Plain C = A * B on raw row-major buffers (accumulating).
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), c.data(), m, k, n);
  return emit(Shape{m, n}, std::move(c), recording({&a, &b}),
              [ai = a.handle(), bi = b.handle(), m, k, n](const ImplPtr&) {
                return [ai, bi, m, k, n](std::span<const double> g) {
                  if (auto ga = grad_of(ai); !ga.empty()) {
                    // dA = G * B^T
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        const double* brow = bi->data.data() + p * n;
                        const double* grow = g.data() + i * n;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + p] += acc;
                      }
                    }
                  }
                  if (auto gb = grad_of(bi); !gb.empty()) {
                    // dB = A^T * G
                    for (std::size_t i = 0; i < m; ++i) {
                      for (std::size_t p = 0; p < k; ++p) {
                        const double av = ai->data[i * k + p];
                        if (av == 0.0) continue;
                        const double* grow = g.data() + i * n;
                        double* gbrow = gb.data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                      }
                    }
                  }
                };
              });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto x = a.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return emit(Shape{n, m}, std::move(y), recording({&a}), [ai = a.handle(), m, n](const ImplPtr&) {
    return [ai, m, n](std::span<const double> g) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    };
  });
}

Tensor frobenius(const Tensor& a, const Tensor& b) {
  require_same_shape("frobenius", a, b);
  const auto x = a.data();
  const auto y = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return emit(Shape{1}, {acc}, recording({&a, &b}), [ai = a.handle(), bi = b.handle()](const ImplPtr&) {
    return [ai, bi](std::span<const double> g) {
      const double s = g[0];
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * bi->data[i];
      if (auto gb = grad_of(bi); !gb.empty())
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += s * ai->data[i];
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
  return emit(a.shape(), std::move(z), recording({&a, &b}), [ai = a.handle(), bi = b.handle()](const ImplPtr&) {
    return [ai, bi](std::span<const double> g) {
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (auto gb = grad_of(bi); !gb.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - y[i];
  return emit(a.shape(), std::move(z), recording({&a, &b}), [ai = a.handle(), bi = b.handle()](const ImplPtr&) {
    return [ai, bi](std::span<const double> g) {
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (auto gb = grad_of(bi); !gb.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    };
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] * y[i];
  return emit(a.shape(), std::move(z), recording({&a, &b}), [ai = a.handle(), bi = b.handle()](const ImplPtr&) {
    return [ai, bi](std::span<const double> g) {
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
      if (auto gb = grad_of(bi); !gb.empty())
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
    };
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] / y[i];
  return emit(a.shape(), std::move(z), recording({&a, &b}), [ai = a.handle(), bi = b.handle()](const ImplPtr&) {
    return [ai, bi](std::span<const double> g) {
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bi->data[i];
      if (auto gb = grad_of(bi); !gb.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double d = bi->data[i];
          gb[i] -= g[i] * ai->data[i] / (d * d);
        }
      }
    };
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double factor) { return affine(a, factor, 0.0); }

Tensor affine(const Tensor& a, double factor, double shift) {
  return unary(
      a, [factor, shift](double x) { return factor * x + shift; },
      [factor](double, double) { return factor; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) {
    throw DimensionError("scale_by: factor must hold one value, got " + shape_to_string(s.shape()));
  }
  const double f = s.data()[0];
  const auto x = a.data();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f * x[i];
  return emit(a.shape(), std::move(y), recording({&a, &s}), [ai = a.handle(), si = s.handle()](const ImplPtr&) {
    return [ai, si](std::span<const double> g) {
      const double f = si->data[0];
      if (auto ga = grad_of(ai); !ga.empty())
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += f * g[i];
      if (auto gs = grad_of(si); !gs.empty()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * ai->data[i];
        gs[0] += acc;
      }
    };
  });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require_rank("add_row_bias", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.numel() != n) {
    throw DimensionError("add_row_bias: bias " + shape_to_string(bias.shape()) +
                         " does not match rows of " + shape_to_string(a.shape()));
  }
  const auto x = a.data();
  const auto b = bias.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + b[j];
  return emit(a.shape(), std::move(y), recording({&a, &bias}),
              [ai = a.handle(), bi = bias.handle(), m, n](const ImplPtr&) {
                return [ai, bi, m, n](std::span<const double> g) {
                  if (auto ga = grad_of(ai); !ga.empty())
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  if (auto gb = grad_of(bi); !gb.empty())
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                };
              });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
  require_rank("scale_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (s.numel() != m) {
    throw DimensionError("scale_rows: factors " + shape_to_string(s.shape()) +
                         " do not match rows of " + shape_to_string(a.shape()));
  }
  const auto x = a.data();
  const auto f = s.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = f[i] * x[i * n + j];
  return emit(a.shape(), std::move(y), recording({&a, &s}),
              [ai = a.handle(), si = s.handle(), m, n](const ImplPtr&) {
                return [ai, si, m, n](std::span<const double> g) {
                  auto ga = grad_of(ai);
                  auto gs = grad_of(si);
                  for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      if (!ga.empty()) ga[i * n + j] += si->data[i] * g[i * n + j];
                      acc += g[i * n + j] * ai->data[i * n + j];
                    }
                    if (!gs.empty()) gs[i] += acc;
                  }
                };
              });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return emit(Shape{1}, {acc}, recording({&a}), [ai = a.handle()](const ImplPtr&) {
    return [ai](std::span<const double> g) {
      auto ga = grad_of(ai);
      for (auto& v : ga) v += g[0];
    };
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(a.shape()));
  }
  const auto sp = split_at(a.shape(), axis);
  if (sp.extent == 0) throw ContractError("mean over an empty axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = Shape{1};
  const auto x = a.data();
  const double inv = 1.0 / static_cast<double>(sp.extent);
  std::vector<double> y(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        y[o * sp.inner + i] += x[(o * sp.extent + e) * sp.inner + i];
  for (auto& v : y) v *= inv;
  return emit(std::move(out_shape), std::move(y), recording({&a}), [ai = a.handle(), sp, inv](const ImplPtr&) {
    return [ai, sp, inv](std::span<const double> g) {
      auto ga = grad_of(ai);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
          for (std::size_t i = 0; i < sp.inner; ++i)
            ga[(o * sp.extent + e) * sp.inner + i] += g[o * sp.inner + i] * inv;
    };
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                         shape_to_string(shape));
  }
  std::vector<double> y(a.data().begin(), a.data().end());
  return emit(std::move(shape), std::move(y), recording({&a}), [ai = a.handle()](const ImplPtr&) {
    return [ai](std::span<const double> g) {
      auto ga = grad_of(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(ref));
  }
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_to_string(s) + " incompatible with " +
                           shape_to_string(ref) + " along axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const auto sp = split_at(out_shape, axis);
  std::vector<double> y(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.shape()[axis];
    const auto x = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * ext * sp.inner), ext * sp.inner,
                  y.begin() + static_cast<std::ptrdiff_t>((o * total + off) * sp.inner));
    off += ext;
  }
  std::vector<ImplPtr> handles;
  for (const auto& p : parts) handles.push_back(p.handle());
  return emit(std::move(out_shape), std::move(y), recording(parts),
              [handles, offsets, sp, axis, total](const ImplPtr&) {
                return [handles, offsets, sp, axis, total](std::span<const double> g) {
                  for (std::size_t k = 0; k < handles.size(); ++k) {
                    auto gp = grad_of(handles[k]);
                    if (gp.empty()) continue;
                    const std::size_t ext = handles[k]->shape[axis];
                    for (std::size_t o = 0; o < sp.outer; ++o)
                      for (std::size_t e = 0; e < ext * sp.inner; ++e)
                        gp[o * ext * sp.inner + e] += g[(o * total + offsets[k]) * sp.inner + e];
                  }
                };
              });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") on axis " + std::to_string(axis) + " of " + shape_to_string(a.shape()));
  }
  const auto sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const auto x = a.data();
  std::vector<double> y(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + start) * sp.inner),
                length * sp.inner, y.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  return emit(std::move(out_shape), std::move(y), recording({&a}),
              [ai = a.handle(), sp, start, length](const ImplPtr&) {
                return [ai, sp, start, length](std::span<const double> g) {
                  auto ga = grad_of(ai);
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t e = 0; e < length * sp.inner; ++e)
                      ga[(o * sp.extent + start) * sp.inner + e] += g[o * length * sp.inner + e];
                };
              });
}

Tensor select(const Tensor& a, std::size_t index) {
  if (a.rank() < 2) throw DimensionError("select needs rank >= 2, got " + shape_to_string(a.shape()));
  Shape rest(a.shape().begin() + 1, a.shape().end());
  return reshape(slice(a, 0, index, 1), std::move(rest));
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("stack of zero tensors");
  std::vector<Tensor> lifted;
  lifted.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    s.insert(s.begin(), 1);
    lifted.push_back(reshape(p, std::move(s)));
  }
  return concat(lifted, 0);
}

Tensor detach(const Tensor& a) { return a.clone(); }

Tensor softmax_rows(const Tensor& a) {
  require_rank("softmax_rows", a, 2);
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto x = a.data();
  std::vector<double> y(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
    if (!(mx > kMaskThreshold)) {
      throw DegenerateRowError("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(row[j] - mx);
      y[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= z;
  }
  return emit(a.shape(), std::move(y), recording({&a}), [ai = a.handle(), m, n](const ImplPtr& out) {
    return [ai, out, m, n](std::span<const double> g) {
      auto ga = grad_of(ai);
      const auto& y = out->data;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    };
  });
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (kernel.rank() != 3) {
    throw DimensionError("conv1d: kernel must be [C_out x C_in x kw], got " +
                         shape_to_string(kernel.shape()));
  }
  const std::size_t c_out = kernel.dim(0), c_in = kernel.dim(1), kw = kernel.dim(2);
  if (kw % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(kw));
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("conv1d: input must be [C x T] or [B x C x T], got " +
                         shape_to_string(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t cx = batched ? x.dim(1) : x.dim(0);
  const std::size_t len = batched ? x.dim(2) : x.dim(1);
  if (cx != c_in) {
    throw DimensionError("conv1d: input " + shape_to_string(x.shape()) + " does not match kernel " +
                         shape_to_string(kernel.shape()));
  }
  if (bias.numel() != c_out) {
    throw DimensionError("conv1d: bias " + shape_to_string(bias.shape()) + " does not match kernel " +
                         shape_to_string(kernel.shape()));
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kw / 2);
  const std::ptrdiff_t tlen = static_cast<std::ptrdiff_t>(len);

  // For tap u, output positions [lo, hi) read input position i + u - pad.
  auto tap_range = [pad, tlen](std::size_t u) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(u) - pad;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(tlen, tlen - shift);
    return std::tuple{shift, lo, hi};
  };

  const auto xv = x.data();
  const auto kv = kernel.data();
  const auto bv = bias.data();
  std::vector<double> y(batch * c_out * len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < c_out; ++c) {
      double* yrow = y.data() + (b * c_out + c) * len;
      std::fill_n(yrow, len, bv[c]);
      for (std::size_t j = 0; j < c_in; ++j) {
        const double* xrow = xv.data() + (b * c_in + j) * len;
        for (std::size_t u = 0; u < kw; ++u) {
          const double w = kv[(c * c_in + j) * kw + u];
          if (w == 0.0) continue;
          const auto [shift, lo, hi] = tap_range(u);
          for (std::ptrdiff_t i = lo; i < hi; ++i) yrow[i] += w * xrow[i + shift];
        }
      }
    }
  }
  Shape out_shape = batched ? Shape{batch, c_out, len} : Shape{c_out, len};
  return emit(std::move(out_shape), std::move(y), recording({&x, &kernel, &bias}),
              [xi = x.handle(), ki = kernel.handle(), bi = bias.handle(), batch, c_in, c_out, kw, len,
               tap_range](const ImplPtr&) {
                return [=](std::span<const double> g) {
                  auto gx = grad_of(xi);
                  auto gk = grad_of(ki);
                  auto gb = grad_of(bi);
                  for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t c = 0; c < c_out; ++c) {
                      const double* grow = g.data() + (b * c_out + c) * len;
                      if (!gb.empty()) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < len; ++i) acc += grow[i];
                        gb[c] += acc;
                      }
                      for (std::size_t j = 0; j < c_in; ++j) {
                        const double* xrow = xi->data.data() + (b * c_in + j) * len;
                        for (std::size_t u = 0; u < kw; ++u) {
                          const auto [shift, lo, hi] = tap_range(u);
                          const std::size_t kidx = (c * c_in + j) * kw + u;
                          if (!gk.empty()) {
                            double acc = 0.0;
                            for (std::ptrdiff_t i = lo; i < hi; ++i) acc += grow[i] * xrow[i + shift];
                            gk[kidx] += acc;
                          }
                          if (!gx.empty()) {
                            const double w = ki->data[kidx];
                            if (w == 0.0) continue;
                            double* gxrow = gx.data() + (b * c_in + j) * len;
                            for (std::ptrdiff_t i = lo; i < hi; ++i) gxrow[i + shift] += w * grow[i];
                          }
                        }
                      }
                    }
                  }
                };
              });
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool train) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("batchnorm1d: input must be [C x T] or [B x C x T], got " +
                         shape_to_string(x.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t ch = batched ? x.dim(1) : x.dim(0);
  const std::size_t len = batched ? x.dim(2) : x.dim(1);
  if (gamma.numel() != ch || beta.numel() != ch || state.running_mean.numel() != ch ||
      state.running_var.numel() != ch) {
    throw DimensionError("batchnorm1d: parameters do not match " + std::to_string(ch) +
                         " channels of " + shape_to_string(x.shape()));
  }
  const std::size_t count = batch * len;
  const auto xv = x.data();
  std::vector<double> mu(ch), inv_std(ch);
  if (train) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < len; ++i) s += xv[(b * ch + c) * len + i];
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < len; ++i) {
          const double d = xv[(b * ch + c) * len + i] - m;
          ss += d * d;
        }
      const double var = ss / static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * m;
      rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + state.eps);
    }
  }
  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<double> xhat(xv.size()), y(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = (b * ch + c) * len + i;
        xhat[k] = (xv[k] - mu[c]) * inv_std[c];
        y[k] = gv[c] * xhat[k] + bv[c];
      }
  return emit(x.shape(), std::move(y), recording({&x, &gamma, &beta}),
              [xi = x.handle(), gi = gamma.handle(), bi = beta.handle(), xhat = std::move(xhat),
               inv_std = std::move(inv_std), batch, ch, len, count, train](const ImplPtr&) {
                return [=](std::span<const double> g) {
                  auto gx = grad_of(xi);
                  auto gg = grad_of(gi);
                  auto gb = grad_of(bi);
                  for (std::size_t c = 0; c < ch; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t k = (b * ch + c) * len + i;
                        sum_g += g[k];
                        sum_gx += g[k] * xhat[k];
                      }
                    if (!gg.empty()) gg[c] += sum_gx;
                    if (!gb.empty()) gb[c] += sum_g;
                    if (gx.empty()) continue;
                    const double gam = gi->data[c];
                    const double n = static_cast<double>(count);
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t i = 0; i < len; ++i) {
                        const std::size_t k = (b * ch + c) * len + i;
                        if (train) {
                          gx[k] += gam * inv_std[c] * (g[k] - sum_g / n - xhat[k] * sum_gx / n);
                        } else {
                          gx[k] += gam * inv_std[c] * g[k];
                        }
                      }
                  }
                };
              });
}

Tensor avgpool1d(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("avgpool1d on a rank-0 tensor");
  const std::size_t len = x.shape().back();
  if (len == 0) throw ContractError("avgpool1d over an empty axis");
  const std::size_t rows = x.numel() / len;
  const std::size_t out_len = (len + 1) / 2;
  Shape out_shape = x.shape();
  out_shape.back() = out_len;
  const auto xv = x.data();
  std::vector<double> y(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * len;
    double* dst = y.data() + r * out_len;
    for (std::size_t i = 0; i < out_len; ++i) {
      dst[i] = (2 * i + 1 < len) ? 0.5 * (src[2 * i] + src[2 * i + 1]) : src[2 * i];
    }
  }
  return emit(std::move(out_shape), std::move(y), recording({&x}), [xi = x.handle(), rows, len, out_len](const ImplPtr&) {
    return [xi, rows, len, out_len](std::span<const double> g) {
      auto gx = grad_of(xi);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < out_len; ++i) {
          const double gi = g[r * out_len + i];
          if (2 * i + 1 < len) {
            gx[r * len + 2 * i] += 0.5 * gi;
            gx[r * len + 2 * i + 1] += 0.5 * gi;
          } else {
            gx[r * len + 2 * i] += gi;
          }
        }
    };
  });
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(p));
  if (!train || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? scale : 0.0;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor straight_through_onehot(const Tensor& soft) {
  if (soft.numel() == 0) throw ContractError("straight_through_onehot of an empty tensor");
  const auto s = soft.data();
  const auto best = static_cast<std::size_t>(std::distance(s.begin(), std::max_element(s.begin(), s.end())));
  std::vector<double> y(s.size(), 0.0);
  y[best] = 1.0;
  return emit(soft.shape(), std::move(y), recording({&soft}), [si = soft.handle()](const ImplPtr&) {
    return [si](std::span<const double> g) {
      auto gs = grad_of(si);
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    };
  });
}

}  // namespace ops
}  // namespace sfn
