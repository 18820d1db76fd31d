#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "sfn/evaluation.hpp"
#include "sfn/io.hpp"
#include "sfn/synthdata.hpp"
#include "support/oracles.hpp"

using namespace sfn;

namespace {

// Time-pooled features of the listed modalities, concatenated per video.
oracle::Matrix pooled(const SynthDataset& s, std::initializer_list<Modality> mods) {
  oracle::Matrix x;
  for (const auto& feats : s.data.features) {
    std::vector<double> row;
    for (auto m : mods) {
      const Tensor& v = feats[static_cast<std::size_t>(m)].values;
      const std::size_t t = v.dim(0), d = v.dim(1);
      for (std::size_t k = 0; k < d; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < t; ++i) acc += v.at(i, k);
        row.push_back(acc / static_cast<double>(t));
      }
    }
    x.push_back(std::move(row));
  }
  return x;
}

std::vector<double> labels(const SynthDataset& s) {
  std::vector<double> y;
  for (const auto& r : s.data.records) y.push_back(r.raw_label);
  return y;
}

}  // namespace

TEST(SynthData, NoiselessSingleModalityIsLinearlyRecoverable) {
  SynthConfig cfg;
  cfg.mode = SynthMode::single;
  cfg.single_modality = Modality::rgb;
  cfg.noise = 0.0;
  const SynthDataset s = generate_dataset(cfg);
  EXPECT_NEAR(oracle::linear_probe_scc(pooled(s, {Modality::rgb}), labels(s), 4, 1e-6, 1), 1.0, 1e-12);
  // The other modalities carry nothing at all.
  for (double v : s.data.features[0][1].values.data()) EXPECT_EQ(v, 0.0);
}

TEST(SynthData, SplitModeNeedsAllModalities) {
  SynthConfig cfg;
  cfg.mode = SynthMode::split;
  cfg.noise = 0.0;
  const SynthDataset s = generate_dataset(cfg);
  const auto y = labels(s);
  const double all = oracle::linear_probe_scc(pooled(s, {Modality::rgb, Modality::flow, Modality::mask}), y, 4, 1e-6, 1);
  EXPECT_NEAR(all, 1.0, 1e-12);
  for (auto m : kModalities) {
    const double one = oracle::linear_probe_scc(pooled(s, {m}), y, 4, 1e-6, 1);
    EXPECT_LT(one, all) << modality_name(m);
    EXPECT_LT(one, 0.95) << modality_name(m);
  }
}

TEST(SynthData, LabelsAndComponentsAgree) {
  SynthConfig cfg;
  cfg.mode = SynthMode::split;
  const SynthDataset s = generate_dataset(cfg);
  ASSERT_EQ(s.data.size(), 40u);
  for (std::size_t i = 0; i < s.data.size(); ++i) {
    const auto& c = s.components[i];
    EXPECT_NEAR(s.score[i], (c[0] + c[1] + c[2]) / 3.0, 1e-15);
    EXPECT_NEAR(s.data.records[i].raw_label, 6.0 + 24.0 * s.score[i], 1e-12);
    EXPECT_GE(s.data.records[i].raw_label, 6.0);
    EXPECT_LE(s.data.records[i].raw_label, 30.0);
    EXPECT_EQ(s.data.features[i][0].values.shape(), (Shape{16, 64}));
  }
  EXPECT_NO_THROW(s.data.validate(6.0, 30.0));
}

TEST(SynthData, DriftMakesSegmentsDiffer) {
  SynthConfig cfg;
  cfg.noise = 0.0;
  const SynthDataset s = generate_dataset(cfg);
  const Tensor& v = s.data.features[0][0].values;
  double diff = 0.0;
  for (std::size_t k = 0; k < 64; ++k) diff += std::abs(v.at(0, k) - v.at(15, k));
  EXPECT_GT(diff, 1e-3);
}

TEST(SynthData, GroupIdsServeEveryScheme) {
  SynthConfig cfg;
  const SynthDataset s = generate_dataset(cfg);
  std::set<std::string> users, trials;
  for (const auto& r : s.data.records) {
    users.insert(*r.user_id);
    trials.insert(*r.supertrial_id);
  }
  EXPECT_EQ(users.size(), 8u);
  EXPECT_EQ(trials.size(), 5u);
  EXPECT_EQ(make_folds(s.data.records, parse_fold_spec("louo"), 1).size(), 8u);
  EXPECT_EQ(make_folds(s.data.records, parse_fold_spec("loso"), 1).size(), 5u);
}

TEST(SynthData, SameSeedByteIdenticalFiles) {
  const auto root = std::filesystem::temp_directory_path() / "sfn_synth_determinism";
  std::filesystem::remove_all(root);
  SynthConfig cfg;
  cfg.n_videos = 6;
  cfg.seed = 7;
  save_dataset(root / "a", generate_dataset(cfg).data);
  save_dataset(root / "b", generate_dataset(cfg).data);
  EXPECT_EQ(directory_sha256(root / "a"), directory_sha256(root / "b"));
  cfg.seed = 8;
  save_dataset(root / "c", generate_dataset(cfg).data);
  EXPECT_NE(directory_sha256(root / "a"), directory_sha256(root / "c"));
  std::filesystem::remove_all(root);
}

TEST(SynthData, InvalidConfigsRejected) {
  SynthConfig cfg;
  cfg.noise = -0.1;
  EXPECT_THROW((void)generate_dataset(cfg), ConfigError);
  cfg = SynthConfig{};
  cfg.n_videos = 0;
  EXPECT_THROW((void)generate_dataset(cfg), ConfigError);
  EXPECT_THROW((void)parse_synth_mode("both"), ConfigError);
  EXPECT_EQ(synth_mode_name(parse_synth_mode("joint")), "joint");
}
