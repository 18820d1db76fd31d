#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "sfn/dra.hpp"
#include "sfn/gradcheck.hpp"
#include "sfn/graph.hpp"
#include "sfn/ops.hpp"
#include "support/oracles.hpp"
#include "support/tensor_util.hpp"

using namespace sfn;
using testutil::random_tensor;
using testutil::to_matrix;
using testutil::values;

namespace {

double frob(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

double norm(const Tensor& a) { return std::sqrt(frob(a, a)); }

std::vector<oracle::Matrix> to_matrices(const std::vector<Tensor>& ts) {
  std::vector<oracle::Matrix> out;
  for (const auto& t : ts) out.push_back(to_matrix(t));
  return out;
}

DraParams random_params(std::size_t d, std::size_t heads, Rng& rng) {
  DraParams p = DraParams::init(d, d, d, heads, rng);
  ParamList list;
  p.collect("dra", list);
  testutil::perturb(list, rng, 0.5);
  return p;
}

}  // namespace

TEST(ScorePair, Examples) {
  const ScorePair zero = score_pair(Tensor(Shape{2, 3}, 0.0), Tensor(Shape{4, 3}, 0.0));
  EXPECT_EQ(zero.a_plus.shape(), (Shape{2, 4}));
  for (double v : zero.a_plus.data()) EXPECT_EQ(v, 0.0);
  for (double v : zero.a_minus.data()) EXPECT_EQ(v, 0.0);

  const ScorePair one = score_pair(Tensor::matrix({{1, 0}}), Tensor::matrix({{1, 0}}));
  EXPECT_NEAR(one.a_plus.item(), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(one.a_minus.item(), -1.0 / std::sqrt(2.0), 1e-15);
}

TEST(ScorePair, ExactNegation) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const ScorePair s = score_pair(random_tensor({3, 4}, rng), random_tensor({5, 4}, rng));
    for (std::size_t i = 0; i < s.a_plus.numel(); ++i) EXPECT_EQ(s.a_plus.data()[i] + s.a_minus.data()[i], 0.0);
  }
}

TEST(ScorePair, EmptyHeadIsConfigError) {
  EXPECT_THROW((void)score_pair(Tensor(Shape{2, 0}), Tensor(Shape{2, 0})), ConfigError);
}

TEST(MixingFactor, ZeroWeightsGiveHalf) {
  const MixingMlp zero{Linear::zeros(4, 2), Linear::zeros(2, 1)};
  Rng rng(1);
  EXPECT_EQ(mixing_factor(random_tensor({5, 4}, rng), zero).item(), 0.5);
}

TEST(MixingFactor, MatchesScalarOracle) {
  Rng rng(1);
  MixingMlp mlp = MixingMlp::init(6, rng);
  // The output layer starts at zero; give it content so the check is informative.
  mlp.output.weight = random_tensor({3, 1}, rng);
  mlp.output.bias = Tensor(Shape{1}, 0.2);
  const Tensor qh = random_tensor({5, 6}, rng);
  const double expected = oracle::mixing_factor(to_matrix(qh), to_matrix(mlp.hidden.weight), values(mlp.hidden.bias),
                                                to_matrix(mlp.output.weight), mlp.output.bias.item());
  EXPECT_NEAR(mixing_factor(qh, mlp).item(), expected, 1e-14);
}

TEST(MixingFactor, PermutationInvariantAndStrictlyInside) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    MixingMlp mlp = MixingMlp::init(4, rng);
    mlp.output.weight = random_tensor({2, 1}, rng, 3.0);
    const Tensor qh = random_tensor({6, 4}, rng, 3.0);
    std::vector<std::size_t> order{5, 3, 1, 0, 2, 4};
    std::shuffle(order.begin(), order.end(), rng);
    Tensor permuted(Shape{6, 4});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 4; ++j) permuted.at(i, j) = qh.at(order[i], j);
    const double a = mixing_factor(qh, mlp).item();
    EXPECT_NEAR(mixing_factor(permuted, mlp).item(), a, 1e-14);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
}

TEST(MixingFactor, EmptySequenceIsContractError) {
  Rng rng(1);
  EXPECT_THROW((void)mixing_factor(Tensor(Shape{0, 4}), MixingMlp::init(4, rng)), ContractError);
}

TEST(Mix, Endpoints) {
  Rng rng(2);
  const Tensor a = random_tensor({3, 3}, rng);
  EXPECT_EQ(values(mix(a, Tensor::scalar(1.0))), values(a));
  EXPECT_EQ(values(mix(a, Tensor::scalar(0.0))), values(ops::neg(a)));
  const Tensor cancelled = mix(a, Tensor::scalar(0.5));
  for (double v : cancelled.data()) EXPECT_EQ(v, 0.0);
}

TEST(Diversify, HandExampleWithoutEps) {
  const Diversified d = diversify({Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})}, 0.0);
  EXPECT_EQ(values(d.p_main), (std::vector<double>{0.5, 0.5}));
  for (std::size_t h = 0; h < 2; ++h) {
    EXPECT_NEAR(d.coefficient[h].item(), 1.0, 1e-12);
    EXPECT_NEAR(d.beta[h].item(), 0.5, 1e-12);
  }
  const auto divg = values(d.a_divg[0]);
  EXPECT_NEAR(divg[0], 0.5, 1e-12);
  EXPECT_NEAR(divg[1], -0.5, 1e-12);
  const auto f1 = values(d.a_final[0]), f2 = values(d.a_final[1]);
  EXPECT_NEAR(f1[0], 1.25, 1e-12);
  EXPECT_NEAR(f1[1], -0.25, 1e-12);
  EXPECT_NEAR(f2[0], -0.25, 1e-12);
  EXPECT_NEAR(f2[1], 1.25, 1e-12);
}

TEST(Diversify, HandExampleWithDefaultEps) {
  // eps = 1e-8 against |P|^2 = 0.5 moves c by ~2e-8.
  const Diversified d = diversify({Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}})}, 1e-8);
  const auto f1 = values(d.a_final[0]);
  EXPECT_NEAR(f1[0], 1.25, 1e-7);
  EXPECT_NEAR(f1[1], -0.25, 1e-7);
}

TEST(Diversify, MatchesOracle) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t heads = 1 + seed % 4;
    std::vector<Tensor> a;
    for (std::size_t h = 0; h < heads; ++h) a.push_back(random_tensor({3, 5}, rng));
    const Diversified d = diversify(a, 1e-8);
    const auto ref = oracle::diversify(to_matrices(a), 1e-8);
    for (std::size_t h = 0; h < heads; ++h) {
      EXPECT_LT(testutil::max_abs_diff(ref.a_final[h], d.a_final[h]), 1e-12);
      EXPECT_NEAR(ref.beta[h], d.beta[h].item(), 1e-14);
    }
  }
}

TEST(Diversify, SingleHeadIsNearIdentity) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor a = random_tensor({3, 4}, rng, 2.0);
    const double eps = 1e-8;
    const Diversified d = diversify({a}, eps);
    const double n = norm(a);
    // c = |A|^2 / (|A|^2 + eps)
    EXPECT_NEAR(d.coefficient[0].item(), 1.0, eps / (n * n) + 1e-15);
    EXPECT_LE(max_abs_diff(d.a_final[0], a), eps * n + 1e-15);
  }
}

TEST(Diversify, IdenticalHeadsAreNearIdentity) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const Tensor a = random_tensor({2, 5}, rng, 2.0);
    const double eps = 1e-8;
    const Diversified d = diversify({a, a.clone(), a.clone(), a.clone()}, eps);
    const double n = norm(a);
    for (const auto& f : d.a_final) EXPECT_LE(max_abs_diff(f, a), eps * n + 1e-15);
  }
}

TEST(Diversify, DivergenceIsNearOrthogonalToMainPattern) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const double eps = 1e-8;
    std::vector<Tensor> a;
    for (int h = 0; h < 3; ++h) a.push_back(random_tensor({4, 4}, rng, 2.0));
    const Diversified d = diversify(a, eps);
    const double pp = frob(d.p_main, d.p_main);
    ASSERT_GE(pp, 1.0);  // the stated bound carries an extra |P|^2 factor
    for (std::size_t h = 0; h < 3; ++h) {
      const double ap = std::abs(frob(a[h], d.p_main));
      const double dp = std::abs(frob(d.a_divg[h], d.p_main));
      // Exact identity: <Adivg, P> = <Amix, P> * eps / (|P|^2 + eps).
      EXPECT_LE(dp, ap * eps / (pp + eps) + 1e-12);
      EXPECT_LE(dp, eps * ap / (pp + eps) * pp + 1e-12);
    }
  }
}

TEST(Diversify, MeanDivergenceVanishesForLargePatterns) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<Tensor> a;
    // The head mean of Adivg is P * eps / (|P|^2 + eps), so |P| must dwarf eps.
    for (int h = 0; h < 4; ++h) a.push_back(random_tensor({3, 3}, rng, 500.0));
    const Diversified d = diversify(a, 1e-8);
    for (std::size_t i = 0; i < 9; ++i) {
      double mean = 0.0;
      for (const auto& g : d.a_divg) mean += g.data()[i] / 4.0;
      EXPECT_NEAR(mean, 0.0, 1e-10);
    }
  }
}

TEST(DraForward, ShapeAndGateRanges) {
  for (unsigned seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t heads = std::size_t{1} << (seed % 3);
    DraParams p = random_params(8, heads, rng);
    for (auto& m : p.mixers) m.output.weight = random_tensor(m.output.weight.shape(), rng, 3.0);
    const Tensor q = random_tensor({5, 8}, rng, 2.0), k = random_tensor({7, 8}, rng, 2.0);
    DraOptions opt;
    opt.record_trace = true;
    const DraOutput out = dra_forward(p, q, k, k, opt);
    EXPECT_EQ(out.out.shape(), (Shape{5, 8}));
    ASSERT_EQ(out.trace.heads.size(), heads);
    for (const auto& h : out.trace.heads) {
      EXPECT_GT(h.alpha, 0.0);
      EXPECT_LT(h.alpha, 1.0);
      EXPECT_GT(h.beta, 0.0);
      EXPECT_LT(h.beta, 1.0);
      for (std::size_t i = 0; i < 5; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 7; ++j) row += h.weights.at(i, j);
        EXPECT_NEAR(row, 1.0, 1e-12);
      }
    }
  }
}

TEST(DraForward, HalfAlphaAveragesProjectedValues) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const DraParams p = random_params(4, 2, rng);
    const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
    DraOptions opt;
    opt.hooks.forced_alpha = 0.5;
    opt.record_trace = true;
    const DraOutput out = dra_forward(p, q, k, v, opt);
    for (const auto& h : out.trace.heads)
      for (double w : h.weights.data()) EXPECT_LT(std::abs(w - 1.0 / 6.0), 1e-12);
    const auto vp = oracle::matmul(to_matrix(v), to_matrix(p.wv));
    std::vector<std::vector<double>> mean_row(1, std::vector<double>(4, 0.0));
    for (const auto& r : vp)
      for (std::size_t c = 0; c < 4; ++c) mean_row[0][c] += r[c] / 6.0;
    const auto expected = oracle::matmul(mean_row, to_matrix(p.wo));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.out.at(i, c), expected[0][c], 1e-12);
  }
}

TEST(DraForward, MatchesPlainAttentionOracle) {
  for (unsigned seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t heads = seed % 2 == 0 ? 1 : 2;
    const DraParams p = random_params(6, heads, rng);
    const Tensor q = random_tensor({4, 6}, rng), k = random_tensor({5, 6}, rng), v = random_tensor({5, 6}, rng);
    DraOptions opt;
    opt.hooks.forced_alpha = 1.0;
    opt.hooks.bypass_diversify = true;
    const DraOutput out = dra_forward(p, q, k, v, opt);
    const auto expected = oracle::plain_attention(to_matrix(q), to_matrix(k), to_matrix(v), to_matrix(p.wq),
                                                  to_matrix(p.wk), to_matrix(p.wv), to_matrix(p.wo), heads);
    EXPECT_LT(testutil::max_abs_diff(expected, out.out), 1e-10);
  }
}

TEST(DraForward, MaskedKeysBehaveAsAbsent) {
  for (unsigned seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    DraParams p = random_params(4, 2, rng);
    const Tensor q = random_tensor({3, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
    Tensor mask(Shape{3, 6}, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 2; j < 6; ++j) mask.at(i, j) = kMaskValue;
    DraOptions opt;
    opt.mask = &mask;
    const Tensor masked = dra_forward(p, q, k, v, opt).out;
    const Tensor alone = dra_forward(p, q, ops::slice(k, 0, 0, 2), ops::slice(v, 0, 0, 2)).out;
    EXPECT_LT(max_abs_diff(masked, alone), 1e-12);
  }
}

TEST(DraForward, FullyMaskedRowIsDegenerate) {
  Rng rng(1);
  const DraParams p = random_params(4, 1, rng);
  const Tensor q = random_tensor({2, 4}, rng), k = random_tensor({3, 4}, rng);
  Tensor mask(Shape{2, 3}, 0.0);
  for (std::size_t j = 0; j < 3; ++j) mask.at(1, j) = kMaskValue;
  DraOptions opt;
  opt.mask = &mask;
  EXPECT_THROW((void)dra_forward(p, q, k, k, opt), DegenerateRowError);
}

TEST(DraForward, Deterministic) {
  Rng rng(3);
  const DraParams p = random_params(8, 4, rng);
  const Tensor q = random_tensor({5, 8}, rng), k = random_tensor({9, 8}, rng);
  EXPECT_TRUE(bitwise_equal(dra_forward(p, q, k, k).out, dra_forward(p, q, k, k).out));
}

TEST(DraForward, GradientMatchesFiniteDifferences) {
  for (std::size_t heads : {1u, 2u, 4u}) {
    for (unsigned seed = 0; seed < 5; ++seed) {
      Rng rng(100 * heads + seed);
      DraParams p = random_params(8, heads, rng);
      const Tensor q = random_tensor({4, 8}, rng, 1.0, true), k = random_tensor({5, 8}, rng, 1.0, true);
      const Tensor probe = random_tensor({4, 8}, rng);
      ParamList list;
      p.collect("dra", list);
      std::vector<Tensor> leaves{q, k};
      for (const auto& e : list) leaves.push_back(e.tensor);
      const auto rep = grad_check([&] { return ops::frobenius(dra_forward(p, q, k, k).out, probe); }, leaves);
      EXPECT_TRUE(rep.passed) << "H=" << heads << " seed " << seed << ": " << rep.worst;
    }
  }
}
