#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfn/dataset.hpp"
#include "sfn/training.hpp"

namespace sfn {

/// Correlation requested on constant input or fewer than two points.
class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Fisher z on |rho| == 1.
class BoundaryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks.
double spearman_scc(std::span<const double> pred, std::span<const double> label);

/// Mean absolute error; inputs are raw-score units.
double mae_metric(std::span<const double> pred, std::span<const double> label);

/// tanh(mean(atanh(rho_i))).
double fisher_z_aggregate(std::span<const double> correlations);

enum class FoldScheme { loso, louo, kfold };

struct FoldSpec {
  FoldScheme scheme = FoldScheme::kfold;
  std::size_t k = 4;  // kfold only
};

/// "loso", "louo", "kfold" (k=4) or "kfoldN".
FoldSpec parse_fold_spec(const std::string& text);
std::string fold_spec_name(const FoldSpec& spec);

struct Fold {
  std::size_t id = 0;
  std::vector<std::size_t> train;  // record indices
  std::vector<std::size_t> test;
};

/// LOUO/LOSO: one fold per distinct user/supertrial (ordered by id).
/// kfold: seeded shuffle, the first n mod k folds take one extra record.
std::vector<Fold> make_folds(const std::vector<VideoRecord>& records, const FoldSpec& spec,
                             std::uint64_t seed);

/// What a fold predictor hands back, all in raw-score units and ordered
/// like fold.test.
struct FoldPredictions {
  std::vector<double> fusion;
  /// Optional; empty vectors are reported as absent.
  std::array<std::vector<double>, 3> unimodal;
  /// Optional fusion predictions after each phase-2 epoch.
  std::vector<std::vector<double>> per_epoch;
  std::vector<EpochRecord> log;
};

using FoldPredictor = std::function<FoldPredictions(const Dataset&, const Fold&)>;

struct Metric {
  std::optional<double> scc;
  std::optional<double> mae;
  std::string error;  // set when scc is undefined
};

struct FoldResult {
  std::size_t fold_id = 0;
  std::vector<std::string> test_ids;
  std::vector<double> predictions;  // denormalized
  std::vector<double> labels;       // raw
  Metric fusion;
  std::array<Metric, 3> unimodal;
  std::optional<std::size_t> best_epoch;
  std::vector<double> best_predictions;
  Metric best;
  bool skipped = false;
  std::string warning;
  std::vector<EpochRecord> log;
};

struct CvOptions {
  FoldSpec spec;
  std::uint64_t seed = 1;
  /// Folds trained concurrently; results are merged by fold id.
  std::size_t jobs = 1;
  /// Evaluate the held-out fold after each phase-2 epoch for best-epoch
  /// reporting.
  bool track_best = true;
};

struct CvReport {
  std::string scheme;
  std::vector<FoldResult> folds;
  Metric fusion;  // mean over folds with a defined value
  std::array<Metric, 3> unimodal;
  Metric best;  // mean of per-fold best-epoch values
  /// Per-task SCC of the pooled held-out predictions, then Fisher z across
  /// tasks, for final and best-epoch predictions.
  std::map<std::string, Metric> per_task;
  Metric across_tasks;
  std::map<std::string, Metric> per_task_best;
  Metric across_tasks_best;
  std::vector<std::string> warnings;
};

/// Trains a fresh two-phase model per fold and predicts the held-out videos.
/// The fold id offsets the seed so every fold is reproducible on its own.
FoldPredictor model_fold_predictor(const ModelConfig& model, const TrainConfig& train, bool track_best = true);

CvReport run_cross_validation(const Dataset& data, const CvOptions& options, const FoldPredictor& predictor);
CvReport run_cross_validation(const Dataset& data, const CvOptions& options, const ModelConfig& model,
                              const TrainConfig& train);

/// Human-readable summary table.
std::string format_report(const CvReport& report);
/// One JSON object per line: a record per fold, then a summary record.
std::string report_jsonl(const CvReport& report);

}  // namespace sfn
