#include "sfn/fusion.hpp"

#include <cmath>

#include "sfn/ops.hpp"

namespace sfn {

FusionNet FusionNet::init(std::size_t dim, Rng& rng) { return FusionNet{Linear::init(3 * dim, 3, rng)}; }

void FusionNet::collect(const std::string& prefix, ParamList& out) const { fc.collect(prefix, out); }

PolicyNet PolicyNet::init(std::size_t dim, std::size_t groups, Rng& rng) {
  return PolicyNet{Linear::init(dim, groups, rng)};
}

void PolicyNet::collect(const std::string& prefix, ParamList& out) const { fc.collect(prefix, out); }

FusionStage FusionStage::init(const ModelConfig& cfg, Rng& rng) {
  FusionStage s;
  s.residual = StageParams::init(cfg.dim, cfg.kernel_width, rng);
  s.cross_stage = DraParams::init(cfg.dim, cfg.dim, cfg.dim, cfg.heads, rng);
  s.cross_stage.eps = cfg.attention_eps;
  s.dynamic = DraParams::init(2 * cfg.dim, cfg.dim, cfg.dim, cfg.heads, rng);
  s.dynamic.eps = cfg.attention_eps;
  for (std::size_t k = 0; k < cfg.fusion_nets; ++k) s.nets.push_back(FusionNet::init(cfg.dim, rng));
  s.policy = PolicyNet::init(cfg.dim, cfg.fusion_nets, rng);
  return s;
}

void FusionStage::collect(const std::string& prefix, ParamList& out) const {
  residual.collect(prefix + ".residual", out);
  cross_stage.collect(prefix + ".csfb", out);
  dynamic.collect(prefix + ".dfb", out);
  for (std::size_t k = 0; k < nets.size(); ++k) nets[k].collect(prefix + ".fusionnet" + std::to_string(k), out);
  policy.collect(prefix + ".policy", out);
}

Tensor segment_mass(const Tensor& weights, const std::vector<std::size_t>& segment_lengths) {
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  std::size_t total = 0;
  for (auto s : segment_lengths) total += s;
  if (total != cols) {
    throw DimensionError("segment_mass: segments cover " + std::to_string(total) + " of " +
                         std::to_string(cols) + " keys");
  }
  Tensor mass(Shape{rows, segment_lengths.size()}, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t col = 0;
    for (std::size_t s = 0; s < segment_lengths.size(); ++s) {
      double acc = 0.0;
      for (std::size_t j = 0; j < segment_lengths[s]; ++j) acc += weights.at(i, col++);
      mass.at(i, s) = acc;
    }
  }
  return mass;
}

CsfbOutput csfb_forward(const FusionStage& stage, const Tensor& fused, const Tensor& f_rgb,
                        const Tensor& f_flow, const Tensor& f_mask, bool record_trace,
                        const DraHooks& hooks) {
  if (f_rgb.shape() != f_flow.shape() || f_rgb.shape() != f_mask.shape()) {
    throw ConfigError("csfb_forward: modality shapes disagree: " + shape_to_string(f_rgb.shape()) + ", " +
                      shape_to_string(f_flow.shape()) + ", " + shape_to_string(f_mask.shape()));
  }
  if (f_rgb.rank() != 2 || fused.rank() != 2 || f_rgb.dim(1) != fused.dim(1)) {
    throw ConfigError("csfb_forward: fusion stream " + shape_to_string(fused.shape()) +
                      " incompatible with modality features " + shape_to_string(f_rgb.shape()));
  }
  const Tensor keys = ops::concat({f_rgb, f_flow, f_mask}, 0);
  DraOptions opts;
  opts.record_trace = record_trace;
  opts.hooks = hooks;
  DraOutput attn = dra_forward(stage.cross_stage, fused, keys, keys, opts);
  CsfbOutput out{std::move(attn.out), std::move(attn.trace), Tensor()};
  if (record_trace) {
    const std::size_t seg = f_rgb.dim(0);
    out.modality_mass = segment_mass(out.trace.mean_weights, {seg, seg, seg});
  }
  return out;
}

Tensor fusionnet_weights(const FusionNet& net, const Tensor& f_rgb, const Tensor& f_flow,
                         const Tensor& f_mask, const std::optional<std::array<double, 3>>& forced_logits) {
  if (f_rgb.shape() != f_flow.shape() || f_rgb.shape() != f_mask.shape()) {
    throw DimensionError("fusionnet_weights: modality shapes disagree");
  }
  Tensor logits;
  if (forced_logits) {
    logits = Tensor(Shape{1, 3}, std::vector<double>(forced_logits->begin(), forced_logits->end()));
  } else {
    const std::size_t d = f_rgb.dim(1);
    std::vector<Tensor> pooled;
    for (const Tensor* f : {&f_rgb, &f_flow, &f_mask}) {
      pooled.push_back(ops::reshape(ops::mean(*f, 0), Shape{1, d}));
    }
    logits = net.fc(ops::concat(pooled, 1));
  }
  return ops::softmax_rows(logits);
}

Tensor policy_mask(const PolicyNet& policy, const Tensor& context, std::size_t groups, bool train,
                   double temperature, Rng& rng, const std::optional<std::vector<double>>& forced_logits) {
  if (groups == 0) throw ConfigError("policy_mask: K must be at least 1");
  if (!(temperature > 0.0)) throw ConfigError("policy_mask: temperature must be positive");
  Tensor logits;
  if (forced_logits) {
    if (forced_logits->size() != groups) throw DimensionError("policy_mask: forced logits must have K entries");
    logits = Tensor(Shape{1, groups}, *forced_logits);
  } else {
    const Tensor pooled = ops::reshape(ops::mean(context, 0), Shape{1, context.dim(1)});
    logits = policy.fc(pooled);
    if (logits.numel() != groups) throw DimensionError("policy_mask: PolicyNet width does not match K");
  }
  if (!train) {
    const auto v = logits.data();
    const auto best = static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
    Tensor onehot(Shape{groups}, 0.0);
    onehot.data()[best] = 1.0;
    return onehot;
  }
  // Gumbel-perturbed logits; uniform draws kept away from 0 and 1.
  std::uniform_real_distribution<double> uniform(1e-12, 1.0 - 1e-12);
  std::vector<double> noise(groups);
  for (auto& g : noise) g = -std::log(-std::log(uniform(rng)));
  const Tensor perturbed = ops::scale(ops::add(logits, Tensor(Shape{1, groups}, std::move(noise))), 1.0 / temperature);
  const Tensor soft = ops::reshape(ops::softmax_rows(perturbed), Shape{groups});
  return ops::straight_through_onehot(soft);
}

DfbOutput dfb_forward(const FusionStage& stage, const Tensor& fused, const Tensor& refined,
                      const Tensor& f_rgb, const Tensor& f_flow, const Tensor& f_mask, bool train,
                      double temperature, Rng& rng, const FusionHooks& hooks, bool record_trace) {
  if (fused.shape() != refined.shape()) {
    throw DimensionError("dfb_forward: fusion stream " + shape_to_string(fused.shape()) +
                         " and CSFB output " + shape_to_string(refined.shape()) + " differ");
  }
  const std::size_t groups = stage.nets.size();
  if (groups == 0) throw ConfigError("dfb_forward: no FusionNets configured");

  DfbOutput out;
  out.query = ops::concat({fused, refined}, 1);
  for (const auto& net : stage.nets) {
    const Tensor w = fusionnet_weights(net, f_rgb, f_flow, f_mask, hooks.fusionnet_logits);
    Tensor mixed = ops::add(ops::add(ops::scale_by(f_rgb, ops::slice(w, 1, 0, 1)),
                                     ops::scale_by(f_flow, ops::slice(w, 1, 1, 1))),
                            ops::scale_by(f_mask, ops::slice(w, 1, 2, 1)));
    out.group_features.push_back(std::move(mixed));
  }
  const std::size_t seg = f_rgb.dim(0);
  const std::size_t keys_len = groups * seg;
  const Tensor keys = ops::concat(out.group_features, 0);

  if (hooks.forced_group) {
    if (*hooks.forced_group >= groups) throw ConfigError("dfb_forward: forced group out of range");
    out.selection = Tensor(Shape{groups}, 0.0);
    out.selection.data()[*hooks.forced_group] = 1.0;
  } else {
    out.selection = policy_mask(stage.policy, fused, groups, train, temperature, rng, hooks.policy_logits);
  }
  const auto sel = out.selection.data();
  out.selected = static_cast<std::size_t>(std::distance(sel.begin(), std::max_element(sel.begin(), sel.end())));

  // Gate each key block by its mask entry: forward values are unchanged
  // (selected block x1, others never attended), and the straight-through
  // gradient reaches the PolicyNet through the selected block.
  std::vector<double> expand(keys_len * groups, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t t = 0; t < seg; ++t) expand[(g * seg + t) * groups + g] = 1.0;
  const Tensor gate = ops::matmul(Tensor(Shape{keys_len, groups}, std::move(expand)),
                                  ops::reshape(out.selection, Shape{groups, 1}));
  const Tensor gated = ops::scale_rows(keys, gate);

  Tensor additive(Shape{fused.dim(0), keys_len}, 0.0);
  for (std::size_t i = 0; i < fused.dim(0); ++i)
    for (std::size_t j = 0; j < keys_len; ++j)
      if (j / seg != out.selected) additive.at(i, j) = kMaskValue;

  DraOptions opts;
  opts.mask = &additive;
  opts.record_trace = record_trace;
  opts.hooks = hooks.attention;
  DraOutput attn = dra_forward(stage.dynamic, out.query, gated, gated, opts);
  out.out = std::move(attn.out);
  out.trace = std::move(attn.trace);
  return out;
}

FusionModel FusionModel::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  FusionModel m;
  m.config = cfg;
  for (auto& s : m.stages) s = FusionStage::init(cfg, rng);
  m.head = RegressionHead::init(cfg.dim, cfg.dropout, rng);
  m.init_features = Tensor(Shape{cfg.dim}, 0.0, cfg.trainable_fusion_init);
  return m;
}

void FusionModel::collect(const std::string& prefix, ParamList& out) const {
  if (config.trainable_fusion_init) out.push_back({prefix + ".init_features", init_features, true});
  for (std::size_t i = 0; i < stages.size(); ++i) stages[i].collect(prefix + ".stage" + std::to_string(i + 1), out);
  head.collect(prefix + ".head", out);
}

ParamList FusionModel::parameters() const {
  ParamList out;
  collect("fusion", out);
  return out;
}

ModalityPyramid branch_pyramid(UnimodalBranch& branch, const Tensor& x, Rng& rng) {
  ModalityPyramid p;
  p[0] = x;
  BranchOutput bo = unimodal_forward(branch, x, /*train=*/false, rng, /*with_head=*/false);
  for (std::size_t i = 0; i < kStageCount; ++i) p[i + 1] = bo.stage_outputs[i];
  return p;
}

namespace {

// [B x d x T] -> sample b as [T x d].
Tensor sample_rows(const Tensor& batch, std::size_t b) { return ops::transpose(ops::select(batch, b)); }

}  // namespace

FusionOutput multimodal_forward(FusionModel& model, const UnimodalFeatures& features, bool train, Rng& rng,
                                const FusionHooks& hooks, bool record_trace) {
  for (const auto& pyramid : features) {
    for (const auto& level : pyramid) {
      if (!level.defined()) throw ConfigError("multimodal_forward: all three modalities are required");
    }
  }
  const Tensor& f1 = features[0][0];
  const std::size_t batch = f1.dim(0);
  const std::size_t dim = model.config.dim;
  const std::size_t len = f1.dim(2);
  if (f1.dim(1) != dim) {
    throw ConfigError("multimodal_forward: features have width " + std::to_string(f1.dim(1)) +
                      ", model expects " + std::to_string(dim));
  }

  Tensor stream;
  if (model.config.trainable_fusion_init) {
    const Tensor column = ops::reshape(model.init_features, Shape{dim, 1});
    const Tensor tiled = ops::matmul(column, Tensor(Shape{1, len}, 1.0));
    std::vector<Tensor> copies(batch, tiled);
    stream = ops::stack(copies);
  } else {
    stream = Tensor(Shape{batch, dim, len}, 0.0);
  }

  FusionOutput out;
  if (record_trace) out.traces.resize(batch);
  for (std::size_t i = 0; i < kStageCount; ++i) {
    FusionStage& stage = model.stages[i];
    const Tensor fused = residual_block(stream, stage.residual, train);
    const std::size_t net_level = model.config.fusionnet_on_stage_outputs ? i + 1 : i;
    std::vector<Tensor> refined_cols;
    for (std::size_t b = 0; b < batch; ++b) {
      const Tensor fb = sample_rows(fused, b);
      const Tensor out_r = sample_rows(features[0][i + 1], b);
      const Tensor out_f = sample_rows(features[1][i + 1], b);
      const Tensor out_m = sample_rows(features[2][i + 1], b);
      CsfbOutput cs = csfb_forward(stage, fb, out_r, out_f, out_m, record_trace, hooks.attention);
      const Tensor in_r = sample_rows(features[0][net_level], b);
      const Tensor in_f = sample_rows(features[1][net_level], b);
      const Tensor in_m = sample_rows(features[2][net_level], b);
      DfbOutput dyn = dfb_forward(stage, fb, cs.out, in_r, in_f, in_m, train, model.config.policy_temperature,
                                  rng, hooks, record_trace);
      refined_cols.push_back(ops::transpose(dyn.out));
      if (record_trace) {
        out.traces[b][i] = StageTrace{std::move(cs.modality_mass), std::move(cs.trace), std::move(dyn.trace),
                                      dyn.selected};
      }
    }
    stream = ops::avgpool1d(ops::stack(refined_cols));
  }
  out.score = regression_head(stream, model.head, train, rng);
  return out;
}

}  // namespace sfn
