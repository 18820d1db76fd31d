#include "sfn/dra.hpp"

#include <cmath>

#include "sfn/ops.hpp"

namespace sfn {

MixingMlp MixingMlp::init(std::size_t head_dim, Rng& rng) {
  const std::size_t hidden = std::max<std::size_t>(head_dim / 2, 1);
  return MixingMlp{Linear::init(head_dim, hidden, rng), Linear::zeros(hidden, 1)};
}

void MixingMlp::collect(const std::string& prefix, ParamList& out) const {
  hidden.collect(prefix + ".hidden", out);
  output.collect(prefix + ".output", out);
}

DraParams DraParams::init(std::size_t query_in, std::size_t key_in, std::size_t dim,
                          std::size_t heads, Rng& rng) {
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " is not divisible into " +
                      std::to_string(heads) + " heads");
  }
  DraParams p;
  p.dim = dim;
  p.heads = heads;
  p.wq = randn({query_in, dim}, 1.0 / std::sqrt(static_cast<double>(query_in)), rng);
  p.wk = randn({key_in, dim}, 1.0 / std::sqrt(static_cast<double>(key_in)), rng);
  p.wv = randn({key_in, dim}, 1.0 / std::sqrt(static_cast<double>(key_in)), rng);
  p.wo = randn({dim, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  for (std::size_t h = 0; h < heads; ++h) p.mixers.push_back(MixingMlp::init(dim / heads, rng));
  return p;
}

void DraParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".wq", wq, true});
  out.push_back({prefix + ".wk", wk, true});
  out.push_back({prefix + ".wv", wv, true});
  out.push_back({prefix + ".wo", wo, true});
  for (std::size_t h = 0; h < mixers.size(); ++h) {
    mixers[h].collect(prefix + ".mix" + std::to_string(h), out);
  }
}

ScorePair score_pair(const Tensor& qh, const Tensor& kh) {
  if (qh.rank() != 2 || kh.rank() != 2 || qh.dim(1) != kh.dim(1)) {
    throw DimensionError("score_pair: head shapes " + shape_to_string(qh.shape()) + " and " +
                         shape_to_string(kh.shape()) + " disagree");
  }
  const std::size_t head_dim = qh.dim(1);
  if (head_dim == 0) throw ConfigError("score_pair: head dimension is zero");
  Tensor a_plus = ops::scale(ops::matmul(qh, ops::transpose(kh)),
                             1.0 / std::sqrt(static_cast<double>(head_dim)));
  Tensor a_minus = ops::neg(a_plus);
  return {std::move(a_plus), std::move(a_minus)};
}

Tensor mixing_factor(const Tensor& qh, const MixingMlp& mlp) {
  if (qh.rank() != 2 || qh.dim(0) == 0) {
    throw ContractError("mixing_factor: query head must be a non-empty [s_q x d_h] matrix, got " +
                        shape_to_string(qh.shape()));
  }
  const Tensor pooled = ops::reshape(ops::mean(qh, 0), Shape{1, qh.dim(1)});
  const Tensor hidden = ops::gelu(mlp.hidden(pooled));
  return ops::reshape(ops::sigmoid(mlp.output(hidden)), Shape{1});
}

Tensor mix(const Tensor& a_plus, const Tensor& alpha) {
  const Tensor a_minus = ops::neg(a_plus);
  return ops::add(ops::scale_by(a_plus, alpha), ops::scale_by(a_minus, ops::affine(alpha, -1.0, 1.0)));
}

Diversified diversify(const std::vector<Tensor>& a_mix, double eps) {
  if (a_mix.empty()) throw ContractError("diversify: no heads");
  for (const auto& a : a_mix) {
    if (a.shape() != a_mix.front().shape()) {
      throw DimensionError("diversify: head shapes " + shape_to_string(a.shape()) + " and " +
                           shape_to_string(a_mix.front().shape()) + " differ");
    }
  }
  const double inv_heads = 1.0 / static_cast<double>(a_mix.size());
  Tensor total = a_mix.front();
  for (std::size_t h = 1; h < a_mix.size(); ++h) total = ops::add(total, a_mix[h]);

  Diversified out;
  out.p_main = ops::scale(total, inv_heads);
  const Tensor denom = ops::affine(ops::frobenius(out.p_main, out.p_main), 1.0, eps);
  for (const auto& a : a_mix) {
    Tensor c = ops::div(ops::frobenius(a, out.p_main), denom);
    Tensor beta = ops::sigmoid(ops::affine(c, -1.0, 1.0));
    Tensor divg = ops::sub(a, ops::scale_by(out.p_main, c));
    out.a_final.push_back(ops::add(a, ops::scale_by(divg, beta)));
    out.coefficient.push_back(std::move(c));
    out.beta.push_back(std::move(beta));
    out.a_divg.push_back(std::move(divg));
  }
  return out;
}

DraOutput dra_forward(const DraParams& params, const Tensor& q, const Tensor& k, const Tensor& v,
                      const DraOptions& options) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("dra_forward: Q, K, V must be matrices");
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("dra_forward: keys " + shape_to_string(k.shape()) + " and values " +
                         shape_to_string(v.shape()) + " differ in length");
  }
  const std::size_t s_q = q.dim(0);
  const std::size_t s_k = k.dim(0);
  if (s_q == 0 || s_k == 0) throw ContractError("dra_forward: empty query or key sequence");

  std::optional<Tensor> keep;
  if (options.mask != nullptr) {
    const Tensor& m = *options.mask;
    if (m.shape() != Shape{s_q, s_k}) {
      throw DimensionError("dra_forward: mask " + shape_to_string(m.shape()) + " does not match [" +
                           std::to_string(s_q) + "x" + std::to_string(s_k) + "] scores");
    }
    std::vector<double> keep_values(m.numel());
    for (std::size_t i = 0; i < keep_values.size(); ++i) {
      keep_values[i] = m.data()[i] > kMaskThreshold ? 1.0 : 0.0;
    }
    keep = Tensor(m.shape(), std::move(keep_values));
  }

  const Tensor qp = ops::matmul(q, params.wq);
  const Tensor kp = ops::matmul(k, params.wk);
  const Tensor vp = ops::matmul(v, params.wv);
  const std::size_t dh = params.head_dim();

  std::vector<Tensor> q_heads, v_heads, a_plus, alphas, a_mix;
  for (std::size_t h = 0; h < params.heads; ++h) {
    Tensor qh = ops::slice(qp, 1, h * dh, dh);
    Tensor kh = ops::slice(kp, 1, h * dh, dh);
    v_heads.push_back(ops::slice(vp, 1, h * dh, dh));
    ScorePair scores = score_pair(qh, kh);
    Tensor alpha = options.hooks.forced_alpha ? Tensor::scalar(*options.hooks.forced_alpha)
                                              : mixing_factor(qh, params.mixers[h]);
    Tensor mixed = mix(scores.a_plus, alpha);
    if (keep) mixed = ops::mul(mixed, *keep);
    a_plus.push_back(std::move(scores.a_plus));
    alphas.push_back(std::move(alpha));
    a_mix.push_back(std::move(mixed));
  }

  std::optional<Diversified> div;
  std::vector<Tensor> scores;
  if (options.hooks.bypass_diversify) {
    scores = a_mix;
  } else {
    div = diversify(a_mix, params.eps);
    scores = div->a_final;
  }

  DraOutput result;
  std::vector<Tensor> head_out;
  std::vector<Tensor> weights;
  for (std::size_t h = 0; h < params.heads; ++h) {
    const Tensor logits = options.mask != nullptr ? ops::add(scores[h], *options.mask) : scores[h];
    weights.push_back(ops::softmax_rows(logits));
    head_out.push_back(ops::matmul(weights.back(), v_heads[h]));
  }
  const Tensor merged = params.heads == 1 ? head_out.front() : ops::concat(head_out, 1);
  result.out = ops::matmul(merged, params.wo);

  if (options.record_trace) {
    auto& tr = result.trace;
    Tensor mean_w(Shape{s_q, s_k}, 0.0);
    for (std::size_t h = 0; h < params.heads; ++h) {
      HeadTrace ht;
      ht.alpha = alphas[h].item();
      ht.a_plus = a_plus[h].clone();
      ht.a_mix = a_mix[h].clone();
      ht.a_final = scores[h].clone();
      ht.weights = weights[h].clone();
      if (div) {
        ht.beta = div->beta[h].item();
        ht.coefficient = div->coefficient[h].item();
        ht.a_divg = div->a_divg[h].clone();
      }
      auto mw = mean_w.data();
      const auto w = weights[h].data();
      for (std::size_t i = 0; i < mw.size(); ++i) mw[i] += w[i] / static_cast<double>(params.heads);
      tr.heads.push_back(std::move(ht));
    }
    tr.p_main = div ? div->p_main.clone() : Tensor();
    tr.mean_weights = std::move(mean_w);
  }
  return result;
}

}  // namespace sfn
