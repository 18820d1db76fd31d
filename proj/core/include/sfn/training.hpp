#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfn/branches.hpp"
#include "sfn/dataset.hpp"
#include "sfn/fusion.hpp"

namespace sfn {

/// Raised when a raw label falls outside the scaler bounds.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised when training produces a non-finite loss.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t epoch, std::size_t batch, double lr)
      : std::runtime_error(what), epoch(epoch), batch(batch), lr(lr) {}
  std::size_t epoch;
  std::size_t batch;
  double lr;
};

/// Affine map of raw scores [y_min, y_max] onto [0, 0.5].
struct LabelScaler {
  double y_min = 6.0;
  double y_max = 30.0;

  [[nodiscard]] double normalize(double raw) const;
  [[nodiscard]] double denormalize(double normalized) const;
};

/// alpha * (pred - target)^2 + (1 - alpha) * |pred - target|, averaged over
/// elements. Subgradient of the absolute term is 0 at equality.
Tensor hybrid_loss(const Tensor& pred, const Tensor& target, double alpha);
double hybrid_loss(double pred, double target, double alpha);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total)) / 2
double cosine_lr(double t, double total, double lr_max, double lr_min);

struct SgdState {
  std::vector<double> velocity;
};

/// v <- momentum * v + grad + decay * w;  w <- w - lr * v.
void sgd_momentum_step(std::span<double> w, std::span<const double> grad, SgdState& state, double lr,
                       double momentum = 0.9, double decay = 1e-4);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

/// Bias-corrected Adam update plus decoupled decay w <- w - lr * decay * w.
void adamw_step(std::span<double> w, std::span<const double> grad, AdamState& state, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double decay = 1e-4);

enum class OptimizerKind { sgd_momentum, adamw };

/// Applies one optimizer to every trainable tensor of a ParamList.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const ParamList& params, double weight_decay, double momentum = 0.9);

  void zero_grad();
  /// Rescales gradients so their global L2 norm is at most `max_norm`.
  void clip_grad_norm(double max_norm);
  void step(double lr);

 private:
  OptimizerKind kind_;
  std::vector<Tensor> params_;
  std::vector<SgdState> sgd_;
  std::vector<AdamState> adam_;
  double decay_;
  double momentum_;
};

struct PhaseConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 8;
  double lr_max = 1e-2;
  double lr_min = 5e-6;
  double weight_decay = 1e-4;
  double momentum = 0.9;  // SGD only
};

struct TrainConfig {
  PhaseConfig phase1{100, 8, 1e-2, 5e-6, 1e-4, 0.9};
  PhaseConfig phase2{100, 8, 1e-3, 5e-6, 1e-4, 0.9};
  double loss_alpha = 0.5;
  std::uint64_t seed = 1;
  /// Fixed training window; longer videos are cropped at a random offset,
  /// shorter ones zero-padded.
  std::size_t train_segments = 16;
  /// 0 disables clipping.
  double grad_clip = 0.0;

  void validate() const;
  /// The published schedule: 300 + 300 epochs, batch 16.
  static TrainConfig paper();
};

struct EpochRecord {
  int phase = 1;
  std::string branch;  // rgb, flow, mask or fusion
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
};

struct SurgFusionModel {
  ModelConfig config;
  std::array<UnimodalBranch, 3> branches;  // indexed by Modality
  FusionModel fusion;

  static SurgFusionModel init(const ModelConfig& cfg, std::uint64_t seed);
  [[nodiscard]] ParamList unimodal_parameters() const;
  [[nodiscard]] ParamList fusion_parameters() const;
};

/// Called after every epoch of either phase.
using EpochHook = std::function<void(const EpochRecord&)>;

struct TrainResult {
  std::vector<EpochRecord> log;
};

/// Phase 1: each unimodal branch trained on its own with SGD + momentum.
void train_unimodal(SurgFusionModel& model, const Dataset& data, const std::vector<std::size_t>& train_ids,
                    const TrainConfig& cfg, std::vector<EpochRecord>& log, const EpochHook& hook = {});

/// Phase 2: unimodal branches frozen, fusion branch trained with AdamW.
void train_fusion(SurgFusionModel& model, const Dataset& data, const std::vector<std::size_t>& train_ids,
                  const TrainConfig& cfg, std::vector<EpochRecord>& log, const EpochHook& hook = {});

TrainResult train_two_phase(SurgFusionModel& model, const Dataset& data,
                            const std::vector<std::size_t>& train_ids, const TrainConfig& cfg,
                            const EpochHook& hook = {});

/// Normalized eval-mode scores for one video over all of its segments.
struct VideoPrediction {
  double fusion = 0.0;
  std::array<double, 3> unimodal{};
};

VideoPrediction predict(SurgFusionModel& model, const Dataset& data, std::size_t index);

/// Frozen-branch pyramids for the given videos, stacked as a batch. All
/// sequences must share one length.
UnimodalFeatures build_unimodal_features(SurgFusionModel& model, const std::vector<const Tensor*>& rgb,
                                         const std::vector<const Tensor*>& flow,
                                         const std::vector<const Tensor*>& mask);

/// Crops or zero-pads a [T x d] sequence to `length` rows starting at `offset`.
Tensor training_window(const Tensor& sequence, std::size_t length, std::size_t offset);

}  // namespace sfn
