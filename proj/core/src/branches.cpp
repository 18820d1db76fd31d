#include "sfn/branches.hpp"

#include "sfn/ops.hpp"

namespace sfn {

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model.dim must be positive");
  if (kernel_width % 2 == 0) throw ConfigError("model.kernel_width must be odd");
  if (fusion_nets == 0) throw ConfigError("model.fusion_nets must be at least 1");
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("model.heads (" + std::to_string(heads) + ") must divide model.dim (" +
                      std::to_string(dim) + ")");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must be in [0, 1)");
  if (policy_temperature <= 0.0) throw ConfigError("model.policy_temperature must be positive");
  if (attention_eps < 0.0) throw ConfigError("model.attention_eps must be non-negative");
  if (!(label_min < label_max)) throw ConfigError("model.label_min must be below model.label_max");
}

StageParams StageParams::init(std::size_t dim, std::size_t kernel_width, Rng& rng) {
  StageParams p{Conv1d::init(dim, dim, kernel_width, rng), BatchNorm1d::init(dim),
                Conv1d::init(dim, dim, kernel_width, rng), BatchNorm1d::init(dim)};
  std::fill(p.bn2.gamma.data().begin(), p.bn2.gamma.data().end(), 0.0);
  return p;
}

void StageParams::collect(const std::string& prefix, ParamList& out) const {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
}

Tensor residual_block(const Tensor& x, StageParams& p, bool train) {
  const std::size_t channels = x.rank() == 3 ? x.dim(1) : x.dim(0);
  if (channels != p.conv1.kernel.dim(1)) {
    throw ConfigError("residual_block: input has " + std::to_string(channels) +
                      " channels, stage expects " + std::to_string(p.conv1.kernel.dim(1)));
  }
  const Tensor h = ops::gelu(p.bn1(p.conv1(x), train));
  const Tensor r = ops::gelu(p.bn2(p.conv2(h), train));
  return ops::add(x, r);
}

Tensor stage_forward(const Tensor& x, StageParams& p, bool train) {
  return ops::avgpool1d(residual_block(x, p, train));
}

RegressionHead RegressionHead::init(std::size_t dim, double dropout, Rng& rng) {
  return RegressionHead{Linear::init(dim, 1, rng), dropout};
}

void RegressionHead::collect(const std::string& prefix, ParamList& out) const {
  fc.collect(prefix + ".fc", out);
}

Tensor regression_head(const Tensor& x, const RegressionHead& head, bool train, Rng& rng) {
  const Tensor batched = x.rank() == 2 ? ops::reshape(x, Shape{1, x.dim(0), x.dim(1)}) : x;
  if (batched.dim(2) == 0) throw ContractError("regression_head: empty sequence");
  const Tensor pooled = ops::mean(batched, 2);  // [B x d]
  const Tensor dropped = ops::dropout(pooled, head.dropout, train, rng);
  const Tensor logits = head.fc(dropped);  // [B x 1]
  return ops::reshape(ops::sigmoid(logits), Shape{batched.dim(0)});
}

UnimodalBranch UnimodalBranch::init(Modality modality, const ModelConfig& cfg, Rng& rng) {
  UnimodalBranch b;
  b.modality = modality;
  for (auto& s : b.stages) s = StageParams::init(cfg.dim, cfg.kernel_width, rng);
  b.head = RegressionHead::init(cfg.dim, cfg.dropout, rng);
  return b;
}

void UnimodalBranch::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].collect(prefix + ".stage" + std::to_string(i + 1), out);
  }
  head.collect(prefix + ".head", out);
}

ParamList UnimodalBranch::parameters() const {
  ParamList out;
  collect(std::string(modality_name(modality)), out);
  return out;
}

BranchOutput unimodal_forward(UnimodalBranch& branch, const Tensor& x, bool train, Rng& rng,
                              bool with_head) {
  if (x.rank() != 3) {
    throw DimensionError("unimodal_forward: expected [B x d x T], got " + shape_to_string(x.shape()));
  }
  if (x.dim(2) == 0) throw DataError("unimodal_forward: empty feature sequence");
  const bool run_train = train && !branch.frozen;
  BranchOutput out;
  Tensor h = x;
  for (std::size_t i = 0; i < kStageCount; ++i) {
    h = stage_forward(h, branch.stages[i], run_train);
    out.stage_outputs[i] = h;
  }
  if (with_head) out.score = regression_head(h, branch.head, run_train, rng);
  return out;
}

BranchOutput unimodal_forward(UnimodalBranch& branch, const FeatureSequence& features, bool train,
                              Rng& rng) {
  if (!features.values.defined() || features.values.rank() != 2 || features.values.dim(0) == 0) {
    throw DataError("unimodal_forward: video '" + features.video_id + "' has no segments");
  }
  return unimodal_forward(branch, batch_channels_first({&features.values}), train, rng);
}

Tensor batch_channels_first(const std::vector<const Tensor*>& sequences) {
  if (sequences.empty()) throw ContractError("batch_channels_first: empty batch");
  const std::size_t len = sequences.front()->dim(0);
  const std::size_t dim = sequences.front()->dim(1);
  std::vector<double> values(sequences.size() * dim * len);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    const Tensor& s = *sequences[b];
    if (s.shape() != Shape{len, dim}) {
      throw DimensionError("batch_channels_first: " + shape_to_string(s.shape()) + " vs [" +
                           std::to_string(len) + "x" + std::to_string(dim) + "]");
    }
    const auto src = s.data();
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < dim; ++c) values[(b * dim + c) * len + t] = src[t * dim + c];
  }
  return Tensor(Shape{sequences.size(), dim, len}, std::move(values));
}

}  // namespace sfn
