#include "sfn/synthdata.hpp"

#include <cmath>

#include "sfn/ops.hpp"

namespace sfn {

SynthMode parse_synth_mode(const std::string& text) {
  if (text == "joint") return SynthMode::joint;
  if (text == "split") return SynthMode::split;
  if (text == "single") return SynthMode::single;
  throw ConfigError("synth.mode must be joint, split or single, got '" + text + "'");
}

std::string synth_mode_name(SynthMode mode) {
  switch (mode) {
    case SynthMode::joint:
      return "joint";
    case SynthMode::split:
      return "split";
    case SynthMode::single:
      return "single";
  }
  return "unknown";
}

void SynthConfig::validate() const {
  if (noise < 0.0) throw ConfigError("synth.noise must be non-negative, got " + std::to_string(noise));
  if (n_videos == 0) throw ConfigError("synth.n_videos must be positive");
  if (segments == 0) throw ConfigError("synth.segments must be positive");
  if (dim < 2) throw ConfigError("synth.dim must be at least 2");
  if (users == 0 || supertrials == 0 || tasks == 0) throw ConfigError("synth.users, synth.supertrials and synth.tasks must be positive");
  if (!(label_min < label_max)) throw ConfigError("synth.label_min must be below synth.label_max");
}

namespace {

// Two orthonormal random directions in R^d (Gram-Schmidt).
std::array<std::vector<double>, 2> random_plane(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<std::vector<double>, 2> basis;
  for (auto& v : basis) {
    v.resize(d);
    for (auto& x : v) x = normal(rng);
  }
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto normalize = [&](std::vector<double>& v) {
    const double n = std::sqrt(dot(v, v));
    for (auto& x : v) x /= n;
  };
  normalize(basis[0]);
  const double proj = dot(basis[0], basis[1]);
  for (std::size_t i = 0; i < d; ++i) basis[1][i] -= proj * basis[0][i];
  normalize(basis[1]);
  return basis;
}

std::string padded(std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

}  // namespace

SynthDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::array<std::array<std::vector<double>, 2>, 3> planes;
  for (auto& p : planes) p = random_plane(cfg.dim, rng);

  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  SynthDataset out;
  const std::size_t width = std::to_string(cfg.n_videos - 1).size();
  for (std::size_t i = 0; i < cfg.n_videos; ++i) {
    std::array<double, 3> c{};
    double score = 0.0;
    if (cfg.mode == SynthMode::split) {
      for (auto& x : c) x = uniform(rng);
      score = (c[0] + c[1] + c[2]) / 3.0;
    } else {
      score = uniform(rng);
      c = {score, score, score};
    }

    VideoRecord rec;
    rec.video_id = "v" + padded(i, width);
    rec.user_id = "u" + std::to_string(i % cfg.users);
    rec.supertrial_id = "s" + std::to_string((i / cfg.users) % cfg.supertrials);
    rec.task = "task" + std::to_string(i % cfg.tasks);
    rec.raw_label = cfg.label_min + score * (cfg.label_max - cfg.label_min);
    std::array<FeatureSequence, 3> feats;
    for (auto mod : kModalities) {
      const auto m = static_cast<std::size_t>(mod);
      rec.feature_paths[m] = rec.video_id + "_" + std::string(modality_name(mod)) + ".sfn";
      const bool carries = cfg.mode != SynthMode::single || mod == cfg.single_modality;
      const double z = carries ? cfg.amplitude * (2.0 * c[m] - 1.0) : 0.0;
      std::vector<double> values(cfg.segments * cfg.dim);
      for (std::size_t t = 0; t < cfg.segments; ++t) {
        // Same drift in every video, so time pooling maps the signal onto one fixed direction.
        const double angle = cfg.drift * static_cast<double>(t) / static_cast<double>(cfg.segments);
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (std::size_t k = 0; k < cfg.dim; ++k) {
          const double u = ca * planes[m][0][k] + sa * planes[m][1][k];
          // Stored at f32 precision so a dataset written to disk reloads bit-identically.
          values[t * cfg.dim + k] = static_cast<float>(z * u + cfg.noise * normal(rng));
        }
      }
      feats[m] = FeatureSequence{rec.video_id, mod, Tensor(Shape{cfg.segments, cfg.dim}, std::move(values))};
    }
    out.data.records.push_back(std::move(rec));
    out.data.features.push_back(std::move(feats));
    out.components.push_back(c);
    out.score.push_back(score);
  }
  return out;
}

}  // namespace sfn
