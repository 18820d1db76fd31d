#pragma once

#include <array>
#include <string>
#include <vector>

#include "sfn/dataset.hpp"
#include "sfn/layers.hpp"

namespace sfn {

inline constexpr std::size_t kStageCount = 3;

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t kernel_width = 3;
  std::size_t fusion_nets = 10;  // K
  std::size_t heads = 2;         // H
  double dropout = 0.3;
  double policy_temperature = 1.0;
  double attention_eps = 1e-8;
  /// Make the zero-initialized fusion stream a learnable per-channel vector.
  bool trainable_fusion_init = false;
  /// FusionNets read stage outputs f_{i+1} instead of stage inputs f_i.
  bool fusionnet_on_stage_outputs = false;
  double label_min = 6.0;
  double label_max = 30.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// conv -> batchnorm -> GELU, twice, around an identity skip.
struct StageParams {
  Conv1d conv1;
  BatchNorm1d bn1;
  Conv1d conv2;
  BatchNorm1d bn2;  // gamma starts at zero: a fresh block is the identity

  static StageParams init(std::size_t dim, std::size_t kernel_width, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// x + Conv(Conv(x)) for x [d x T] or [B x d x T].
Tensor residual_block(const Tensor& x, StageParams& p, bool train);

/// avgpool(residual_block(x)); halves T (rounding up).
Tensor stage_forward(const Tensor& x, StageParams& p, bool train);

struct RegressionHead {
  Linear fc;  // d -> 1
  double dropout = 0.3;

  static RegressionHead init(std::size_t dim, double dropout, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Time-mean, dropout (train only), linear, sigmoid. x is [d x T] or
/// [B x d x T]; returns [B] scores in (0, 1).
Tensor regression_head(const Tensor& x, const RegressionHead& head, bool train, Rng& rng);

struct UnimodalBranch {
  Modality modality = Modality::rgb;
  std::array<StageParams, kStageCount> stages;
  RegressionHead head;
  /// Frozen branches always run in eval mode.
  bool frozen = false;

  static UnimodalBranch init(Modality modality, const ModelConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
  [[nodiscard]] ParamList parameters() const;
};

struct BranchOutput {
  Tensor score;                                    // [B]
  std::array<Tensor, kStageCount> stage_outputs;  // f_2, f_3, f_4 as [B x d x T_i]
};

/// Runs the three stages on x [B x d x T]; the head is skipped when
/// `with_head` is false (fusion training disables unimodal heads).
BranchOutput unimodal_forward(UnimodalBranch& branch, const Tensor& x, bool train, Rng& rng,
                              bool with_head = true);

/// Single video entry point; `features` is [T x d].
BranchOutput unimodal_forward(UnimodalBranch& branch, const FeatureSequence& features, bool train,
                              Rng& rng);

/// Stacks per-video [T x d] features into a [B x d x T] batch.
Tensor batch_channels_first(const std::vector<const Tensor*>& sequences);

}  // namespace sfn
