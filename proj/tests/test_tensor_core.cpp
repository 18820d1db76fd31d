#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sfn/gradcheck.hpp"
#include "sfn/graph.hpp"
#include "sfn/ops.hpp"
#include "support/tensor_util.hpp"

using namespace sfn;
using testutil::random_tensor;
using testutil::values;

namespace {

// GELU whose backward omits the x * pdf(x) term.
Tensor wrong_gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  }
  Tensor y(x.shape(), std::move(out));
  if (Graph* g = active_graph(); g != nullptr && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xi = x.handle();
    g->record(y.handle(), [xi](std::span<const double> grad) {
      if (xi->grad.empty()) xi->grad.assign(xi->data.size(), 0.0);
      for (std::size_t i = 0; i < grad.size(); ++i)
        xi->grad[i] += grad[i] * 0.5 * (1.0 + std::erf(xi->data[i] / std::sqrt(2.0)));
    });
  }
  return y;
}

}  // namespace

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, CopiesAliasClonesDoNot) {
  Tensor a(Shape{2}, 0.0);
  Tensor alias = a;
  Tensor copy = a.clone();
  a.data()[0] = 7.0;
  EXPECT_EQ(alias.data()[0], 7.0);
  EXPECT_EQ(copy.data()[0], 0.0);
}

TEST(Matmul, Examples) {
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(values(ops::matmul(eye, m)), values(m));
  EXPECT_EQ(values(ops::matmul(m, Tensor::matrix({{5, 6}, {7, 8}}))), (std::vector<double>{19, 22, 43, 50}));
  Rng rng(3);
  const Tensor any = random_tensor({2, 5}, rng);
  const Tensor annihilated = ops::matmul(Tensor(Shape{3, 2}, 0.0), any);
  for (double v : annihilated.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    (void)ops::matmul(Tensor(Shape{2, 3}, 0.0), Tensor(Shape{2, 3}, 0.0));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(values(ops::softmax_rows(Tensor::matrix({{0, 0}}))), (std::vector<double>{0.5, 0.5}));
  const auto r = values(ops::softmax_rows(Tensor::matrix({{std::log(2.0), 0}})));
  EXPECT_NEAR(r[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(values(ops::softmax_rows(Tensor::matrix({{0, kMaskValue}}))), (std::vector<double>{1.0, 0.0}));
}

TEST(Softmax, FullyMaskedRowIsDegenerate) {
  EXPECT_THROW((void)ops::softmax_rows(Tensor::matrix({{1, 2}, {kMaskValue, kMaskValue}})), DegenerateRowError);
}

TEST(Softmax, RowsSumToOneForLargeMagnitudes) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor s = ops::softmax_rows(random_tensor({4, 7}, rng, 1e3));
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(s.at(i, j), 0.0);
        total += s.at(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Conv1d, Examples) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 6}, rng);
  const Tensor id = ops::conv1d(x, Tensor(Shape{1, 1, 1}, 1.0), Tensor(Shape{1}, 0.0));
  EXPECT_TRUE(bitwise_equal(id, x));
  const Tensor zero = ops::conv1d(x, Tensor(Shape{1, 1, 3}, 0.0), Tensor(Shape{1}, 0.0));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  const Tensor y = ops::conv1d(Tensor::matrix({{1, 2, 3}}), Tensor(Shape{1, 1, 3}, std::vector<double>{1, 0, -1}),
                               Tensor(Shape{1}, 0.0));
  EXPECT_EQ(values(y), (std::vector<double>{-2, -2, 2}));
}

TEST(Conv1d, EvenKernelIsConfigError) {
  EXPECT_THROW((void)ops::conv1d(Tensor(Shape{1, 4}, 1.0), Tensor(Shape{1, 1, 2}, 1.0), Tensor(Shape{1}, 0.0)),
               ConfigError);
}

TEST(Conv1d, IdentityKernelIsIdentityForRandomInputs) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t c = 1 + seed % 4, t = 1 + seed % 9;
    const Tensor x = random_tensor({2, c, t}, rng);
    Tensor k(Shape{c, c, 3}, 0.0);
    for (std::size_t i = 0; i < c; ++i) k.data()[(i * c + i) * 3 + 1] = 1.0;
    EXPECT_TRUE(bitwise_equal(ops::conv1d(x, k, Tensor(Shape{c}, 0.0)), x));
  }
}

TEST(BatchNorm, EvalIsFixedAffineMap) {
  Rng rng(2);
  BatchNormState state = BatchNormState::fresh(3);
  const Tensor g = random_tensor({3}, rng), b = random_tensor({3}, rng);
  // Move the running statistics away from their initial values first.
  for (int i = 0; i < 3; ++i) (void)ops::batchnorm1d(random_tensor({2, 3, 5}, rng), g, b, state, true);
  const Tensor x = random_tensor({2, 3, 5}, rng);
  const Tensor y1 = ops::batchnorm1d(x, g, b, state, false);
  const Tensor y2 = ops::batchnorm1d(x, g, b, state, false);
  EXPECT_TRUE(bitwise_equal(y1, y2));
  for (std::size_t c = 0; c < 3; ++c) {
    const double scale = g.data()[c] / std::sqrt(state.running_var.data()[c] + state.eps);
    for (std::size_t bt = 0; bt < 2; ++bt)
      for (std::size_t t = 0; t < 5; ++t) {
        const std::size_t i = (bt * 3 + c) * 5 + t;
        EXPECT_NEAR(y1.data()[i], (x.data()[i] - state.running_mean.data()[c]) * scale + b.data()[c], 1e-12);
      }
  }
}

TEST(BatchNorm, TrainNormalizesAndUpdatesRunningStats) {
  Rng rng(4);
  BatchNormState state = BatchNormState::fresh(2);
  const Tensor x = random_tensor({3, 2, 4}, rng, 2.0);
  const Tensor y = ops::batchnorm1d(x, Tensor(Shape{2}, 1.0), Tensor(Shape{2}, 0.0), state, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, sq = 0.0, xmean = 0.0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t t = 0; t < 4; ++t) {
        const std::size_t i = (b * 2 + c) * 4 + t;
        mean += y.data()[i] / 12.0;
        sq += y.data()[i] * y.data()[i] / 12.0;
        xmean += x.data()[i] / 12.0;
      }
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq, 1.0, 1e-3);  // eps in the denominator
    EXPECT_NEAR(state.running_mean.data()[c], 0.1 * xmean, 1e-12);
  }
}

TEST(AvgPool, HalvesAndCarriesOddTail) {
  const Tensor y = ops::avgpool1d(Tensor::matrix({{1, 3, 5, 7, 9}}));
  EXPECT_EQ(values(y), (std::vector<double>{2, 6, 9}));
  EXPECT_EQ(ops::avgpool1d(Tensor(Shape{2, 1}, 4.0)).shape(), (Shape{2, 1}));
}

TEST(Dropout, InvertedScalingAndEvalIdentity) {
  Rng rng(1);
  const Tensor x(Shape{1000}, 1.0);
  const Tensor eval = ops::dropout(x, 0.3, false, rng);
  EXPECT_TRUE(bitwise_equal(eval, x));
  const Tensor train = ops::dropout(x, 0.3, true, rng);
  std::size_t kept = 0;
  for (double v : train.data()) {
    if (v != 0.0) {
      EXPECT_NEAR(v, 1.0 / 0.7, 1e-15);
      ++kept;
    }
  }
  EXPECT_GT(kept, 600u);
  EXPECT_LT(kept, 800u);
}

TEST(Concat, AlongEitherAxis) {
  const Tensor a = Tensor::matrix({{1, 2}}), b = Tensor::matrix({{3, 4}});
  EXPECT_EQ(ops::concat({a, b}, 0).shape(), (Shape{2, 2}));
  EXPECT_EQ(values(ops::concat({a, b}, 1)), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Backward, Examples) {
  {
    Tensor x(Shape{2, 3}, 0.7, true);
    Graph g;
    GraphScope s(g);
    g.backward(ops::sum(x));
    for (double v : x.grad()) EXPECT_EQ(v, 1.0);
  }
  {
    Tensor x = Tensor::scalar(3.0, true);
    Graph g;
    GraphScope s(g);
    g.backward(ops::square(x));
    EXPECT_EQ(x.grad()[0], 6.0);
  }
  {
    Tensor x = Tensor::scalar(0.0, true);
    Graph g;
    GraphScope s(g);
    g.backward(ops::sigmoid(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
  }
}

TEST(Backward, ErrorsOnNonScalarAndRepeat) {
  Tensor x(Shape{2}, 1.0, true);
  Graph g;
  GraphScope s(g);
  const Tensor y = ops::scale(x, 2.0);
  EXPECT_THROW(g.backward(y), ContractError);
  const Tensor loss = ops::sum(y);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), ContractError);
  g.reset();
  x.zero_grad();
  const Tensor again = ops::sum(ops::scale(x, 2.0));
  g.backward(again);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Backward, NoGradScopeRecordsNothing) {
  Tensor x(Shape{2}, 1.0, true);
  Graph g;
  GraphScope s(g);
  {
    NoGradScope off;
    (void)ops::sum(ops::square(x));
  }
  EXPECT_EQ(g.size(), 0u);
}

TEST(Backward, FiniteOutputsOnFiniteInputs) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor x = random_tensor({3, 4}, rng, 50.0);
    for (const Tensor& y : {ops::sigmoid(x), ops::gelu(x), ops::softmax_rows(x), ops::square(x)})
      for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(GradCheck, BilinearIsNearExact) {
  Rng rng(11);
  const Tensor a = random_tensor({3, 4}, rng, 1.0, true), b = random_tensor({4, 2}, rng, 1.0, true);
  const auto rep = grad_check([&] { return ops::sum(ops::matmul(a, b)); }, {a, b});
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(GradCheck, WrongGeluGradientFails) {
  Rng rng(12);
  const Tensor x = random_tensor({3, 4}, rng, 1.0, true);
  const auto good = grad_check([&] { return ops::sum(ops::gelu(x)); }, {x});
  const auto bad = grad_check([&] { return ops::sum(wrong_gelu(x)); }, {x});
  EXPECT_TRUE(good.passed);
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_rel_error, 1e-2);
}

TEST(GradCheck, NonDeterministicFunctionIsContractError) {
  Rng rng(13);
  const Tensor x = random_tensor({4}, rng, 1.0, true);
  Rng drift(0);
  auto f = [&] { return ops::sum(ops::dropout(x, 0.5, true, drift)); };
  EXPECT_THROW((void)grad_check(f, {x}), ContractError);
}

TEST(GradCheck, LeavesMustRequireGrad) {
  const Tensor x(Shape{2}, 1.0);
  EXPECT_THROW((void)grad_check([&] { return ops::sum(x); }, {x}), ContractError);
}
