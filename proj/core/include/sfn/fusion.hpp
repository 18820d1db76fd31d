#pragma once

#include <array>
#include <optional>
#include <vector>

#include "sfn/branches.hpp"
#include "sfn/dra.hpp"

namespace sfn {

/// Emits a convex combination (alpha_r, alpha_f, alpha_m) of the three
/// modalities from their time-pooled, concatenated features.
struct FusionNet {
  Linear fc;  // 3d -> 3

  static FusionNet init(std::size_t dim, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Picks one of K fusion strategies from the time-pooled fusion stream.
struct PolicyNet {
  Linear fc;  // d -> K

  static PolicyNet init(std::size_t dim, std::size_t groups, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FusionStage {
  StageParams residual;
  DraParams cross_stage;  // CSFB attention: d query, d keys
  DraParams dynamic;      // DFB attention: 2d query, d keys
  std::vector<FusionNet> nets;
  PolicyNet policy;

  static FusionStage init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Overrides used by tests and the equivalence checks.
struct FusionHooks {
  DraHooks attention;
  /// Logits used by every FusionNet instead of its linear layer.
  std::optional<std::array<double, 3>> fusionnet_logits;
  std::optional<std::vector<double>> policy_logits;
  /// Hard-select this group (0-based) regardless of the PolicyNet.
  std::optional<std::size_t> forced_group;
};

struct CsfbOutput {
  Tensor out;  // [T_i x d]
  AttentionTrace trace;
  /// Attention mass on each modality's third of the key axis, [T_i x 3],
  /// averaged over heads. Only filled when tracing.
  Tensor modality_mass;
};

/// Query from the fusion stream, keys/values from the sequence-axis
/// concatenation of the three stage outputs.
CsfbOutput csfb_forward(const FusionStage& stage, const Tensor& fused, const Tensor& f_rgb,
                        const Tensor& f_flow, const Tensor& f_mask, bool record_trace = false,
                        const DraHooks& hooks = {});

/// Sums trace weights [s_q x s_k] over consecutive key segments.
Tensor segment_mass(const Tensor& weights, const std::vector<std::size_t>& segment_lengths);

/// Softmax over three logits; returns [1 x 3].
Tensor fusionnet_weights(const FusionNet& net, const Tensor& f_rgb, const Tensor& f_flow,
                         const Tensor& f_mask,
                         const std::optional<std::array<double, 3>>& forced_logits = std::nullopt);

/// One-hot [K] mask. Training draws a relaxed categorical sample and passes
/// its hard argmax forward with a straight-through gradient; eval takes the
/// argmax of the logits.
Tensor policy_mask(const PolicyNet& policy, const Tensor& context, std::size_t groups, bool train,
                   double temperature, Rng& rng,
                   const std::optional<std::vector<double>>& forced_logits = std::nullopt);

struct DfbOutput {
  Tensor out;  // [T_i x d]
  AttentionTrace trace;
  Tensor selection;                    // [K] one-hot
  std::size_t selected = 0;
  std::vector<Tensor> group_features;  // f_cs for each FusionNet, [T x d]
  Tensor query;                        // Concat(fused, refined) along features, [T_i x 2d]
};

DfbOutput dfb_forward(const FusionStage& stage, const Tensor& fused, const Tensor& refined,
                      const Tensor& f_rgb, const Tensor& f_flow, const Tensor& f_mask, bool train,
                      double temperature, Rng& rng, const FusionHooks& hooks = {},
                      bool record_trace = false);

/// The fusion branch: three refinement stages over a zero-initialized stream,
/// then a regression head.
struct FusionModel {
  ModelConfig config;
  std::array<FusionStage, kStageCount> stages;
  RegressionHead head;
  Tensor init_features;  // [d]; learnable only with config.trainable_fusion_init

  static FusionModel init(const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  [[nodiscard]] ParamList parameters() const;
};

/// Per-modality frozen branch features for one batch: index 0 holds the
/// stage-1 input f_1, indices 1..3 hold stage outputs f_2..f_4, each
/// [B x d x T_j].
using ModalityPyramid = std::array<Tensor, kStageCount + 1>;
using UnimodalFeatures = std::array<ModalityPyramid, 3>;

/// Builds the pyramid by running a (frozen) branch without its head.
ModalityPyramid branch_pyramid(UnimodalBranch& branch, const Tensor& x, Rng& rng);

struct StageTrace {
  Tensor modality_mass;  // CSFB, [T_i x 3], averaged over heads
  AttentionTrace cross_stage;
  AttentionTrace dynamic;
  std::size_t selected = 0;
};

struct FusionOutput {
  Tensor score;  // [B]
  /// traces[b][i] for sample b, stage i (filled when tracing).
  std::vector<std::array<StageTrace, kStageCount>> traces;
};

FusionOutput multimodal_forward(FusionModel& model, const UnimodalFeatures& features, bool train,
                                Rng& rng, const FusionHooks& hooks = {}, bool record_trace = false);

}  // namespace sfn
