#include "sfn/gradsuite.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "sfn/dra.hpp"
#include "sfn/fusion.hpp"
#include "sfn/ops.hpp"

namespace sfn {

namespace {

struct Instance {
  std::function<Tensor()> f;
  std::vector<Tensor> leaves;
};

using Builder = std::function<Instance(Rng&)>;

Tensor leaf(Shape shape, Rng& rng, double lo_abs = 0.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    x = normal(rng);
    // Keep away from kinks/poles where a test needs it.
    if (std::abs(x) < lo_abs) x = x < 0 ? x - lo_abs : x + lo_abs;
  }
  return Tensor(std::move(shape), std::move(v), true);
}

// Scalar probe <out, W> with a fixed random W: a plain sum would be blind to
// shift-invariant outputs like softmax rows.
std::function<Tensor()> probe(std::function<Tensor()> body, Shape shape, Rng& rng) {
  const Tensor w = leaf(std::move(shape), rng);
  Tensor weights(w.shape(), std::vector<double>(w.data().begin(), w.data().end()));
  return [body = std::move(body), weights] { return ops::frobenius(body(), weights); };
}

Instance unary(Rng& rng, Tensor (*op)(const Tensor&), double lo_abs = 0.0) {
  Tensor a = leaf({3, 4}, rng, lo_abs);
  return {probe([a, op] { return op(a); }, {3, 4}, rng), {a}};
}

Instance binary(Rng& rng, Tensor (*op)(const Tensor&, const Tensor&), double lo_abs_b = 0.0) {
  Tensor a = leaf({3, 4}, rng), b = leaf({3, 4}, rng, lo_abs_b);
  return {probe([a, b, op] { return op(a, b); }, {3, 4}, rng), {a, b}};
}

std::vector<std::pair<std::string, Builder>> op_cases() {
  std::vector<std::pair<std::string, Builder>> c;
  c.emplace_back("matmul", [](Rng& r) {
    Tensor a = leaf({3, 5}, r), b = leaf({5, 2}, r);
    return Instance{probe([a, b] { return ops::matmul(a, b); }, {3, 2}, r), {a, b}};
  });
  c.emplace_back("transpose", [](Rng& r) {
    Tensor a = leaf({3, 5}, r);
    return Instance{probe([a] { return ops::transpose(a); }, {5, 3}, r), {a}};
  });
  c.emplace_back("frobenius", [](Rng& r) {
    Tensor a = leaf({3, 4}, r), b = leaf({3, 4}, r);
    return Instance{[a, b] { return ops::frobenius(a, b); }, {a, b}};
  });
  c.emplace_back("add", [](Rng& r) { return binary(r, ops::add); });
  c.emplace_back("sub", [](Rng& r) { return binary(r, ops::sub); });
  c.emplace_back("mul", [](Rng& r) { return binary(r, ops::mul); });
  c.emplace_back("div", [](Rng& r) { return binary(r, ops::div, 0.5); });
  c.emplace_back("neg", [](Rng& r) { return unary(r, ops::neg); });
  c.emplace_back("scale", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return Instance{probe([a] { return ops::scale(a, -1.7); }, {3, 4}, r), {a}};
  });
  c.emplace_back("affine", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return Instance{probe([a] { return ops::affine(a, 0.3, 2.0); }, {3, 4}, r), {a}};
  });
  c.emplace_back("square", [](Rng& r) { return unary(r, ops::square); });
  c.emplace_back("abs", [](Rng& r) { return unary(r, ops::abs, 0.05); });
  c.emplace_back("sigmoid", [](Rng& r) { return unary(r, ops::sigmoid); });
  c.emplace_back("gelu", [](Rng& r) { return unary(r, ops::gelu); });
  c.emplace_back("scale_by", [](Rng& r) {
    Tensor a = leaf({3, 4}, r), s = leaf({1}, r);
    return Instance{probe([a, s] { return ops::scale_by(a, s); }, {3, 4}, r), {a, s}};
  });
  c.emplace_back("add_row_bias", [](Rng& r) {
    Tensor a = leaf({3, 4}, r), b = leaf({4}, r);
    return Instance{probe([a, b] { return ops::add_row_bias(a, b); }, {3, 4}, r), {a, b}};
  });
  c.emplace_back("scale_rows", [](Rng& r) {
    Tensor a = leaf({3, 4}, r), s = leaf({3}, r);
    return Instance{probe([a, s] { return ops::scale_rows(a, s); }, {3, 4}, r), {a, s}};
  });
  c.emplace_back("sum", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return Instance{[a] { return ops::sum(ops::square(a)); }, {a}};
  });
  c.emplace_back("mean", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return Instance{[a] { return ops::mean(ops::square(a)); }, {a}};
  });
  c.emplace_back("mean_axis", [](Rng& r) {
    Tensor a = leaf({2, 3, 4}, r);
    return Instance{probe([a] { return ops::mean(a, 1); }, {2, 4}, r), {a}};
  });
  c.emplace_back("reshape", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return Instance{probe([a] { return ops::reshape(a, {2, 6}); }, {2, 6}, r), {a}};
  });
  c.emplace_back("concat", [](Rng& r) {
    Tensor a = leaf({2, 3}, r), b = leaf({2, 2}, r), e = leaf({3, 3}, r);
    auto f = probe([a, b] { return ops::concat({a, b}, 1); }, {2, 5}, r);
    auto g = probe([a, e] { return ops::concat({a, e}, 0); }, {5, 3}, r);
    return Instance{[f, g] { return ops::add(f(), g()); }, {a, b, e}};
  });
  c.emplace_back("slice", [](Rng& r) {
    Tensor a = leaf({4, 5}, r);
    return Instance{probe([a] { return ops::slice(a, 1, 1, 3); }, {4, 3}, r), {a}};
  });
  c.emplace_back("select", [](Rng& r) {
    Tensor a = leaf({3, 2, 4}, r);
    return Instance{probe([a] { return ops::select(a, 1); }, {2, 4}, r), {a}};
  });
  c.emplace_back("stack", [](Rng& r) {
    Tensor a = leaf({2, 3}, r), b = leaf({2, 3}, r);
    return Instance{probe([a, b] { return ops::stack({a, b}); }, {2, 2, 3}, r), {a, b}};
  });
  c.emplace_back("softmax_rows", [](Rng& r) {
    Tensor a = leaf({3, 5}, r);
    return Instance{probe([a] { return ops::softmax_rows(a); }, {3, 5}, r), {a}};
  });
  c.emplace_back("conv1d", [](Rng& r) {
    Tensor x = leaf({2, 3, 6}, r), k = leaf({4, 3, 3}, r), b = leaf({4}, r);
    return Instance{probe([x, k, b] { return ops::conv1d(x, k, b); }, {2, 4, 6}, r), {x, k, b}};
  });
  c.emplace_back("batchnorm1d", [](Rng& r) {
    Tensor x = leaf({2, 3, 5}, r), g = leaf({3}, r), b = leaf({3}, r);
    auto state = std::make_shared<BatchNormState>(BatchNormState::fresh(3));
    return Instance{probe([x, g, b, state] { return ops::batchnorm1d(x, g, b, *state, true); }, {2, 3, 5}, r),
                    {x, g, b}};
  });
  c.emplace_back("avgpool1d", [](Rng& r) {
    Tensor x = leaf({2, 3, 7}, r);
    return Instance{probe([x] { return ops::avgpool1d(x); }, {2, 3, 4}, r), {x}};
  });
  c.emplace_back("dropout", [](Rng& r) {
    Tensor x = leaf({3, 4}, r);
    const std::uint64_t mask_seed = r();
    return Instance{probe(
                        [x, mask_seed] {
                          Rng local(mask_seed);  // same mask on every evaluation
                          return ops::dropout(x, 0.3, true, local);
                        },
                        {3, 4}, r),
                    {x}};
  });
  return c;
}

std::vector<Tensor> trainable(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params)
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

// Fresh layers sit at alpha = 0.5, where every mixed score is 0 and the
// diversification denominator is dominated by eps: the function bends on a
// scale close to the finite-difference step there. Zero-initialized layers
// would also hide their inputs' gradients. Perturb everything.
void randomize(const ParamList& params, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 0.3);
  for (const auto& p : params) {
    if (!p.trainable) continue;
    Tensor t = p.tensor;
    for (auto& w : t.data()) w += normal(rng);
  }
}

ModelConfig tiny_config(std::size_t heads) {
  ModelConfig cfg;
  cfg.dim = 4;
  cfg.heads = heads;
  cfg.fusion_nets = 3;
  cfg.dropout = 0.0;
  return cfg;
}

std::vector<std::pair<std::string, Builder>> pipeline_cases() {
  std::vector<std::pair<std::string, Builder>> c;
  c.emplace_back("dra_forward", [](Rng& r) {
    auto p = std::make_shared<DraParams>(DraParams::init(6, 4, 4, 2, r));
    // Exercise the mixing MLP output layer too.
    for (auto& m : p->mixers)
      for (auto& w : m.output.weight.data()) w = std::normal_distribution<double>(0.0, 0.5)(r);
    Tensor q = leaf({3, 6}, r), k = leaf({5, 4}, r), v = leaf({5, 4}, r);
    auto mask = std::make_shared<Tensor>(Shape{3, 5}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) mask->at(i, 4) = kMaskValue;
    ParamList params;
    p->collect("dra", params);
    auto leaves = trainable(params);
    leaves.insert(leaves.end(), {q, k, v});
    DraOptions opts;
    opts.mask = mask.get();
    return Instance{probe([p, q, k, v, mask, opts] { return dra_forward(*p, q, k, v, opts).out; }, {3, 4}, r),
                    leaves};
  });
  c.emplace_back("csfb_dfb", [](Rng& r) {
    auto stage = std::make_shared<FusionStage>(FusionStage::init(tiny_config(2), r));
    Tensor fused = leaf({4, 4}, r), fr = leaf({4, 4}, r), ff = leaf({4, 4}, r), fm = leaf({4, 4}, r);
    const std::size_t group = std::uniform_int_distribution<std::size_t>(0, 2)(r);
    ParamList params;
    stage->collect("stage", params);
    randomize(params, r);
    auto leaves = trainable(params);
    leaves.insert(leaves.end(), {fused, fr, ff, fm});
    return Instance{probe(
                        [stage, fused, fr, ff, fm, group] {
                          Rng unused(0);
                          FusionHooks hooks;
                          hooks.forced_group = group;
                          const CsfbOutput cs = csfb_forward(*stage, fused, fr, ff, fm);
                          return dfb_forward(*stage, fused, cs.out, fr, ff, fm, true, 1.0, unused, hooks).out;
                        },
                        {4, 4}, r),
                    leaves};
  });
  c.emplace_back("fusion_pipeline", [](Rng& r) {
    auto model = std::make_shared<FusionModel>(FusionModel::init(tiny_config(2), r));
    ParamList params = model->parameters();
    randomize(params, r);
    auto feats = std::make_shared<UnimodalFeatures>();
    const std::size_t batch = 2, len = 8;
    for (auto& pyramid : *feats) {
      std::size_t t = len;
      for (auto& level : pyramid) {
        level = leaf({batch, 4, t}, r);
        level.set_requires_grad(false);
        t = (t + 1) / 2;
      }
    }
    const std::size_t group = std::uniform_int_distribution<std::size_t>(0, 2)(r);
    return Instance{probe(
                        [model, feats, group] {
                          Rng unused(0);
                          FusionHooks hooks;
                          hooks.forced_group = group;
                          return multimodal_forward(*model, *feats, true, unused, hooks).score;
                        },
                        {batch}, r),
                    trainable(params)};
  });
  return c;
}

}  // namespace

std::vector<std::string> grad_suite_case_names(bool pipeline) {
  std::vector<std::string> names;
  for (const auto& [n, b] : op_cases()) names.push_back(n);
  if (pipeline)
    for (const auto& [n, b] : pipeline_cases()) names.push_back(n);
  return names;
}

GradSuiteResult run_grad_suite(const GradSuiteOptions& options) {
  auto cases = op_cases();
  if (options.pipeline) {
    auto p = pipeline_cases();
    cases.insert(cases.end(), p.begin(), p.end());
  }
  GradSuiteResult result;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& [name, build] = cases[c];
    GradSuiteCase summary;
    summary.name = name;
    for (std::size_t s = 0; s < options.seeds; ++s) {
      const std::uint64_t seed = options.first_seed + s;
      std::seed_seq seq{seed, static_cast<std::uint64_t>(c)};
      Rng rng(seq);
      Instance inst = build(rng);
      const GradCheckReport rep = grad_check(inst.f, inst.leaves, options.check);
      ++summary.runs;
      if (!rep.passed) ++summary.failures;
      if (summary.runs == 1 || rep.max_rel_error > summary.worst.max_rel_error) {
        summary.worst = rep;
        summary.worst_seed = seed;
      }
    }
    if (summary.failures) result.passed = false;
    result.cases.push_back(std::move(summary));
  }
  return result;
}

}  // namespace sfn
