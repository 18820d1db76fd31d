#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfn/branches.hpp"
#include "sfn/synthdata.hpp"
#include "sfn/training.hpp"

namespace sfn {

/// Everything one CLI run needs. Each field maps to a `section.key` entry of
/// the config file (e.g. model.heads, train.phase2_lr_max, data.index).
struct ExperimentConfig {
  std::string profile = "desk";
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  /// data.source: "index" reads data.index, "synth" generates from [synth].
  std::string data_source = "index";
  std::string data_index;  // data.index; empty means "not given"
  std::string scheme = "kfold4";
  std::string out = "out";
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  bool track_best = true;

  /// Pushes the experiment seed into the training and synthetic configs.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

/// "desk": small-scale defaults (d=64, 100 + 100 epochs, batch 8).
/// "paper": d=256, K=10, H=2, alpha=0.5, 300 + 300 epochs, batch 16.
ExperimentConfig profile_config(const std::string& name);

/// Parses `[section]` headers and `key = value` lines. The optional
/// experiment.profile key picks the base profile; every other key overrides
/// it. Unknown sections or keys raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one `section.key=value` override.
void set_config_value(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value);

/// Every key with its current value, in the file format.
std::string to_config_text(const ExperimentConfig& cfg);

/// All recognized `section.key` names.
std::vector<std::string> config_keys();

}  // namespace sfn
