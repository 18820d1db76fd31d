#include "sfn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sfn/graph.hpp"
#include "sfn/ops.hpp"

namespace sfn {

double LabelScaler::normalize(double raw) const {
  if (!(y_min < y_max)) throw ConfigError("label scaler needs y_min < y_max");
  if (raw < y_min || raw > y_max) {
    throw RangeError("label " + std::to_string(raw) + " outside [" + std::to_string(y_min) + ", " +
                     std::to_string(y_max) + "]");
  }
  return 0.5 * (raw - y_min) / (y_max - y_min);
}

double LabelScaler::denormalize(double normalized) const {
  return y_min + 2.0 * normalized * (y_max - y_min);
}

Tensor hybrid_loss(const Tensor& pred, const Tensor& target, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("loss alpha must be in [0, 1]");
  const Tensor diff = ops::sub(pred, target);
  return ops::add(ops::scale(ops::mean(ops::square(diff)), alpha),
                  ops::scale(ops::mean(ops::abs(diff)), 1.0 - alpha));
}

double hybrid_loss(double pred, double target, double alpha) {
  const double d = pred - target;
  return alpha * d * d + (1.0 - alpha) * std::abs(d);
}

double cosine_lr(double t, double total, double lr_max, double lr_min) {
  if (total <= 0.0) throw ConfigError("cosine schedule needs a positive horizon");
  if (t < 0.0 || t > total) throw ContractError("cosine schedule step outside [0, T]");
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

void sgd_momentum_step(std::span<double> w, std::span<const double> grad, SgdState& state, double lr,
                       double momentum, double decay) {
  if (state.velocity.empty()) state.velocity.assign(w.size(), 0.0);
  if (grad.size() != w.size() || state.velocity.size() != w.size()) {
    throw ContractError("sgd_momentum_step: weight, gradient and velocity sizes differ");
  }
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto& v = state.velocity[i];
    v = momentum * v + grad[i] + decay * w[i];
    w[i] -= lr * v;
  }
}

void adamw_step(std::span<double> w, std::span<const double> grad, AdamState& state, double lr, double beta1,
                double beta2, double eps, double decay) {
  if (state.m.empty()) {
    state.m.assign(w.size(), 0.0);
    state.v.assign(w.size(), 0.0);
  }
  if (grad.size() != w.size() || state.m.size() != w.size() || state.v.size() != w.size()) {
    throw ContractError("adamw_step: weight, gradient and moment sizes differ");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] -= lr * decay * w[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

Optimizer::Optimizer(OptimizerKind kind, const ParamList& params, double weight_decay, double momentum)
    : kind_(kind), decay_(weight_decay), momentum_(momentum) {
  for (const auto& p : params) {
    if (p.trainable) params_.push_back(p.tensor);
  }
  sgd_.resize(params_.size());
  adam_.resize(params_.size());
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::clip_grad_norm(double max_norm) {
  double total = 0.0;
  for (auto& p : params_) {
    for (double g : p.grad_buffer()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (norm <= max_norm || norm == 0.0) return;
  const double factor = max_norm / norm;
  for (auto& p : params_) {
    for (double& g : p.grad_buffer()) g *= factor;
  }
}

void Optimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].data();
    const auto g = params_[i].grad_buffer();
    if (kind_ == OptimizerKind::sgd_momentum) {
      sgd_momentum_step(w, g, sgd_[i], lr, momentum_, decay_);
    } else {
      adamw_step(w, g, adam_[i], lr, 0.9, 0.999, 1e-8, decay_);
    }
  }
}

void TrainConfig::validate() const {
  if (loss_alpha < 0.0 || loss_alpha > 1.0) throw ConfigError("train.loss_alpha must be in [0, 1]");
  for (const auto* p : {&phase1, &phase2}) {
    const std::string tag = p == &phase1 ? "train.phase1" : "train.phase2";
    if (p->epochs == 0) throw ConfigError(tag + ".epochs must be positive");
    if (p->batch_size == 0) throw ConfigError(tag + ".batch_size must be positive");
    if (p->lr_max < p->lr_min || p->lr_min < 0.0) throw ConfigError(tag + " learning rates must satisfy 0 <= lr_min <= lr_max");
    if (p->weight_decay < 0.0) throw ConfigError(tag + ".weight_decay must be non-negative");
  }
  if (train_segments == 0) throw ConfigError("train.train_segments must be positive");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative");
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.phase1 = PhaseConfig{300, 16, 1e-2, 5e-6, 1e-4, 0.9};
  c.phase2 = PhaseConfig{300, 16, 1e-3, 5e-6, 1e-4, 0.9};
  return c;
}

SurgFusionModel SurgFusionModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SurgFusionModel m;
  m.config = cfg;
  for (auto mod : kModalities) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(mod) + 1, std::uint64_t{0x5f}};
    Rng rng(seq);
    m.branches[static_cast<std::size_t>(mod)] = UnimodalBranch::init(mod, cfg, rng);
  }
  std::seed_seq seq{seed, std::uint64_t{4}, std::uint64_t{0x5f}};
  Rng rng(seq);
  m.fusion = FusionModel::init(cfg, rng);
  return m;
}

ParamList SurgFusionModel::unimodal_parameters() const {
  ParamList out;
  for (const auto& b : branches) b.collect(std::string(modality_name(b.modality)), out);
  return out;
}

ParamList SurgFusionModel::fusion_parameters() const { return fusion.parameters(); }

Tensor training_window(const Tensor& sequence, std::size_t length, std::size_t offset) {
  const std::size_t len = sequence.dim(0);
  const std::size_t dim = sequence.dim(1);
  std::vector<double> values(length * dim, 0.0);
  const auto src = sequence.data();
  const std::size_t rows = offset < len ? std::min(length, len - offset) : 0;
  std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(offset * dim), rows * dim, values.begin());
  return Tensor(Shape{length, dim}, std::move(values));
}

namespace {

Rng phase_rng(std::uint64_t seed, std::uint64_t phase, std::uint64_t stream) {
  std::seed_seq seq{seed, phase, stream};
  return Rng(seq);
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::vector<std::size_t> ids, std::size_t batch_size,
                                                       Rng& rng) {
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < ids.size(); i += batch_size) {
    batches.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(i),
                         ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), i + batch_size)));
  }
  return batches;
}

// One window per video, same offset for all three modalities.
std::array<std::vector<Tensor>, 3> batch_windows(const Dataset& data, const std::vector<std::size_t>& batch,
                                                 std::size_t length, Rng& rng) {
  std::array<std::vector<Tensor>, 3> out;
  for (std::size_t idx : batch) {
    const std::size_t len = data.features[idx][0].length();
    std::size_t offset = 0;
    if (len > length) offset = std::uniform_int_distribution<std::size_t>(0, len - length)(rng);
    for (std::size_t m = 0; m < 3; ++m) out[m].push_back(training_window(data.features[idx][m].values, length, offset));
  }
  return out;
}

std::vector<const Tensor*> pointers(const std::vector<Tensor>& v) {
  std::vector<const Tensor*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

Tensor batch_targets(const Dataset& data, const std::vector<std::size_t>& batch, const LabelScaler& scaler) {
  std::vector<double> y;
  for (std::size_t idx : batch) y.push_back(scaler.normalize(data.records[idx].raw_label));
  return Tensor(Shape{batch.size()}, std::move(y));
}

void check_finite(const Tensor& loss, std::size_t epoch, std::size_t batch, double lr, const std::string& what) {
  const double v = loss.item();
  if (!std::isfinite(v)) {
    throw NumericalError(what + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ", lr " + std::to_string(lr),
                         epoch, batch, lr);
  }
}

}  // namespace

void train_unimodal(SurgFusionModel& model, const Dataset& data, const std::vector<std::size_t>& train_ids,
                    const TrainConfig& cfg, std::vector<EpochRecord>& log, const EpochHook& hook) {
  cfg.validate();
  if (train_ids.empty()) throw DataError("no training videos");
  const LabelScaler scaler{model.config.label_min, model.config.label_max};
  const PhaseConfig& pc = cfg.phase1;
  for (auto mod : kModalities) {
    const std::size_t m = static_cast<std::size_t>(mod);
    UnimodalBranch& branch = model.branches[m];
    branch.frozen = false;
    Rng rng = phase_rng(cfg.seed, 1, m);
    Optimizer opt(OptimizerKind::sgd_momentum, branch.parameters(), pc.weight_decay, pc.momentum);
    for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
      const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(pc.epochs), pc.lr_max, pc.lr_min);
      const auto batches = shuffled_batches(train_ids, pc.batch_size, rng);
      double loss_sum = 0.0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto windows = batch_windows(data, batches[b], cfg.train_segments, rng);
        const Tensor x = batch_channels_first(pointers(windows[m]));
        const Tensor target = batch_targets(data, batches[b], scaler);
        opt.zero_grad();
        Graph graph;
        GraphScope scope(graph);
        const BranchOutput out = unimodal_forward(branch, x, /*train=*/true, rng);
        const Tensor loss = hybrid_loss(out.score, target, cfg.loss_alpha);
        check_finite(loss, epoch, b, lr, std::string(modality_name(mod)) + " branch");
        graph.backward(loss);
        if (cfg.grad_clip > 0.0) opt.clip_grad_norm(cfg.grad_clip);
        opt.step(lr);
        loss_sum += loss.item();
      }
      EpochRecord rec{1, std::string(modality_name(mod)), epoch, lr, loss_sum / static_cast<double>(batches.size())};
      log.push_back(rec);
      if (hook) hook(rec);
    }
  }
}

UnimodalFeatures build_unimodal_features(SurgFusionModel& model, const std::vector<const Tensor*>& rgb,
                                         const std::vector<const Tensor*>& flow,
                                         const std::vector<const Tensor*>& mask) {
  NoGradScope no_grad;
  Rng unused(0);
  UnimodalFeatures f;
  const std::array<const std::vector<const Tensor*>*, 3> inputs{&rgb, &flow, &mask};
  for (std::size_t m = 0; m < 3; ++m) {
    f[m] = branch_pyramid(model.branches[m], batch_channels_first(*inputs[m]), unused);
  }
  return f;
}

void train_fusion(SurgFusionModel& model, const Dataset& data, const std::vector<std::size_t>& train_ids,
                  const TrainConfig& cfg, std::vector<EpochRecord>& log, const EpochHook& hook) {
  cfg.validate();
  if (train_ids.empty()) throw DataError("no training videos");
  for (auto& b : model.branches) {
    b.frozen = true;
    for (auto& p : b.parameters()) p.tensor.set_requires_grad(false);
  }
  const LabelScaler scaler{model.config.label_min, model.config.label_max};
  const PhaseConfig& pc = cfg.phase2;
  Rng rng = phase_rng(cfg.seed, 2, 0);
  Optimizer opt(OptimizerKind::adamw, model.fusion_parameters(), pc.weight_decay);
  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    const double lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(pc.epochs), pc.lr_max, pc.lr_min);
    const auto batches = shuffled_batches(train_ids, pc.batch_size, rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto windows = batch_windows(data, batches[b], cfg.train_segments, rng);
      const UnimodalFeatures feats =
          build_unimodal_features(model, pointers(windows[0]), pointers(windows[1]), pointers(windows[2]));
      const Tensor target = batch_targets(data, batches[b], scaler);
      opt.zero_grad();
      Graph graph;
      GraphScope scope(graph);
      const FusionOutput out = multimodal_forward(model.fusion, feats, /*train=*/true, rng);
      const Tensor loss = hybrid_loss(out.score, target, cfg.loss_alpha);
      check_finite(loss, epoch, b, lr, "fusion branch");
      graph.backward(loss);
      if (cfg.grad_clip > 0.0) opt.clip_grad_norm(cfg.grad_clip);
      opt.step(lr);
      loss_sum += loss.item();
    }
    EpochRecord rec{2, "fusion", epoch, lr, loss_sum / static_cast<double>(batches.size())};
    log.push_back(rec);
    if (hook) hook(rec);
  }
}

TrainResult train_two_phase(SurgFusionModel& model, const Dataset& data, const std::vector<std::size_t>& train_ids,
                            const TrainConfig& cfg, const EpochHook& hook) {
  TrainResult result;
  train_unimodal(model, data, train_ids, cfg, result.log, hook);
  train_fusion(model, data, train_ids, cfg, result.log, hook);
  return result;
}

VideoPrediction predict(SurgFusionModel& model, const Dataset& data, std::size_t index) {
  NoGradScope no_grad;
  Rng unused(0);
  const auto& f = data.features.at(index);
  VideoPrediction p;
  UnimodalFeatures feats;
  for (std::size_t m = 0; m < 3; ++m) {
    const Tensor x = batch_channels_first({&f[m].values});
    BranchOutput bo = unimodal_forward(model.branches[m], x, /*train=*/false, unused);
    p.unimodal[m] = bo.score.item();
    feats[m][0] = x;
    for (std::size_t i = 0; i < kStageCount; ++i) feats[m][i + 1] = bo.stage_outputs[i];
  }
  p.fusion = multimodal_forward(model.fusion, feats, /*train=*/false, unused).score.item();
  return p;
}

}  // namespace sfn
