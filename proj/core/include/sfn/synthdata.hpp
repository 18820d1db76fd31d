#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sfn/dataset.hpp"

namespace sfn {

enum class SynthMode { joint, split, single };

SynthMode parse_synth_mode(const std::string& text);
std::string synth_mode_name(SynthMode mode);

struct SynthConfig {
  std::size_t n_videos = 40;
  std::size_t segments = 16;  // T
  std::size_t dim = 64;       // d
  SynthMode mode = SynthMode::split;
  Modality single_modality = Modality::rgb;  // mode == single only
  double noise = 0.1;                        // sigma
  double amplitude = 1.0;
  /// Total rotation (radians) of each signal direction over a video.
  double drift = std::numbers::pi / 2.0;
  std::size_t users = 8;
  std::size_t supertrials = 5;
  std::size_t tasks = 1;
  double label_min = 6.0;
  double label_max = 30.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthDataset {
  Dataset data;
  /// Per-video latent components in [0, 1], indexed by Modality. Joint and
  /// single modes repeat the shared score.
  std::vector<std::array<double, 3>> components;
  /// Normalized latent score in [0, 1]; raw label = min + score * (max - min).
  std::vector<double> score;
};

/// Each modality's segment t carries amplitude * (2 c_m - 1) * u_m(t) plus
/// isotropic N(0, sigma^2) noise, where u_m(t) rotates slowly inside a
/// random plane. split: c_r, c_f, c_m independent, score = their mean.
/// joint: one score in every modality. single: score in one modality, the
/// others noise only.
SynthDataset generate_dataset(const SynthConfig& cfg);

}  // namespace sfn
