#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sfn/layers.hpp"
#include "sfn/tensor.hpp"

namespace sfn {

/// Per-head MLP producing the positive/negative mixing logit from the
/// sequence-pooled query: d_h -> max(d_h / 2, 1) -> 1 with GELU.
struct MixingMlp {
  Linear hidden;
  Linear output;  // zero-initialized, so a fresh head starts at alpha = 0.5

  static MixingMlp init(std::size_t head_dim, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Divergence regulated attention parameters.
///
/// Projections use the row-vector convention (X W). The query projection may
/// take a wider input than d, which is how the dynamic fusion block maps its
/// [2d] query stream straight into the attention width.
struct DraParams {
  std::size_t dim = 0;    // d
  std::size_t heads = 1;  // H, must divide d
  double eps = 1e-8;
  Tensor wq;  // [query_in x d]
  Tensor wk;  // [key_in x d]
  Tensor wv;  // [key_in x d]
  Tensor wo;  // [d x d]
  std::vector<MixingMlp> mixers;  // one per head

  static DraParams init(std::size_t query_in, std::size_t key_in, std::size_t dim, std::size_t heads,
                        Rng& rng);
  [[nodiscard]] std::size_t head_dim() const { return dim / heads; }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Test hooks. Forcing alpha replaces the mixing MLP output for every head;
/// bypassing diversification feeds A_mix straight to the softmax.
struct DraHooks {
  std::optional<double> forced_alpha;
  bool bypass_diversify = false;
};

struct DraOptions {
  /// Additive [s_q x s_k] mask with entries 0 or kMaskValue.
  const Tensor* mask = nullptr;
  bool record_trace = false;
  DraHooks hooks;
};

struct HeadTrace {
  double alpha = 0.0;
  double beta = 0.0;
  double coefficient = 0.0;  // <A_mix, P_main> / (|P_main|^2 + eps)
  Tensor a_plus;
  Tensor a_mix;
  Tensor a_divg;
  Tensor a_final;
  Tensor weights;  // softmax rows
};

struct AttentionTrace {
  std::vector<HeadTrace> heads;
  Tensor p_main;
  /// Softmax weights averaged over heads, [s_q x s_k].
  Tensor mean_weights;
};

struct DraOutput {
  Tensor out;  // [s_q x d]
  AttentionTrace trace;  // populated when DraOptions::record_trace
};

struct ScorePair {
  Tensor a_plus;
  Tensor a_minus;
};

/// A+ = Qh Kh^T / sqrt(d_h) and its exact negation.
ScorePair score_pair(const Tensor& qh, const Tensor& kh);

/// sigmoid(MLP(mean over the sequence of Qh)); returns a one-element tensor.
Tensor mixing_factor(const Tensor& qh, const MixingMlp& mlp);

/// alpha * A+ + (1 - alpha) * (-A+).
Tensor mix(const Tensor& a_plus, const Tensor& alpha);

struct Diversified {
  Tensor p_main;
  std::vector<Tensor> coefficient;
  std::vector<Tensor> beta;
  std::vector<Tensor> a_divg;
  std::vector<Tensor> a_final;
};

/// Pushes every head away from the head-mean pattern:
///   P = mean_h A_mix_h,  c_h = <A_mix_h, P> / (|P|^2 + eps),
///   beta_h = sigmoid(1 - c_h),  A_divg_h = A_mix_h - c_h P,
///   A_final_h = A_mix_h + beta_h A_divg_h.
Diversified diversify(const std::vector<Tensor>& a_mix, double eps);

/// Multi-head divergence regulated attention of Q [s_q x query_in] over
/// K, V [s_k x key_in]. With a mask, masked score entries are excluded from
/// the diversification statistics and then pushed to kMaskValue before the
/// softmax, so a masked run equals a run over the unmasked keys alone.
DraOutput dra_forward(const DraParams& params, const Tensor& q, const Tensor& k, const Tensor& v,
                      const DraOptions& options = {});

}  // namespace sfn
