#include "sfn/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace sfn {

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman_scc(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) throw ContractError("spearman_scc: length mismatch");
  if (pred.size() < 2) throw UndefinedCorrelation("spearman_scc: need at least two values");
  for (double v : pred)
    if (!std::isfinite(v)) throw UndefinedCorrelation("spearman_scc: non-finite prediction");
  const auto rp = average_ranks(pred);
  const auto rl = average_ranks(label);
  const double n = static_cast<double>(rp.size());
  const double mp = std::accumulate(rp.begin(), rp.end(), 0.0) / n;
  const double ml = std::accumulate(rl.begin(), rl.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) {
    sxy += (rp[i] - mp) * (rl[i] - ml);
    sxx += (rp[i] - mp) * (rp[i] - mp);
    syy += (rl[i] - ml) * (rl[i] - ml);
  }
  if (sxx == 0.0) throw UndefinedCorrelation("spearman_scc: predictions are constant");
  if (syy == 0.0) throw UndefinedCorrelation("spearman_scc: labels are constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double mae_metric(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) {
    throw ContractError("mae_metric: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(label.size()) + " labels");
  }
  if (pred.empty()) throw ContractError("mae_metric: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - label[i]);
  return acc / static_cast<double>(pred.size());
}

double fisher_z_aggregate(std::span<const double> correlations) {
  if (correlations.empty()) throw ContractError("fisher_z_aggregate: empty input");
  double acc = 0.0;
  for (double r : correlations) {
    if (!(std::abs(r) < 1.0)) throw BoundaryError("fisher_z_aggregate: |rho| must be below 1, got " + std::to_string(r));
    acc += std::atanh(r);
  }
  return std::tanh(acc / static_cast<double>(correlations.size()));
}

FoldSpec parse_fold_spec(const std::string& text) {
  if (text == "loso") return {FoldScheme::loso, 0};
  if (text == "louo") return {FoldScheme::louo, 0};
  if (text.rfind("kfold", 0) == 0) {
    const std::string rest = text.substr(5);
    if (rest.empty()) return {FoldScheme::kfold, 4};
    std::size_t pos = 0;
    unsigned long k = 0;
    try {
      k = std::stoul(rest, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == rest.size() && k >= 2) return {FoldScheme::kfold, k};
  }
  throw ConfigError("experiment.scheme must be loso, louo or kfoldN with N >= 2, got '" + text + "'");
}

std::string fold_spec_name(const FoldSpec& spec) {
  switch (spec.scheme) {
    case FoldScheme::loso:
      return "loso";
    case FoldScheme::louo:
      return "louo";
    case FoldScheme::kfold:
      return "kfold" + std::to_string(spec.k);
  }
  return "unknown";
}

std::vector<Fold> make_folds(const std::vector<VideoRecord>& records, const FoldSpec& spec, std::uint64_t seed) {
  std::vector<Fold> folds;
  if (spec.scheme == FoldScheme::kfold) {
    if (spec.k < 2) throw ConfigError("kfold needs k >= 2");
    if (records.size() < spec.k) {
      throw DataError("kfold(" + std::to_string(spec.k) + ") needs at least that many records, got " +
                      std::to_string(records.size()));
    }
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{seed, std::uint64_t{0xf01d}};
    Rng rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t base = records.size() / spec.k, extra = records.size() % spec.k;
    std::size_t pos = 0;
    for (std::size_t f = 0; f < spec.k; ++f) {
      const std::size_t len = base + (f < extra ? 1 : 0);
      Fold fold;
      fold.id = f;
      fold.test.assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + len));
      std::sort(fold.test.begin(), fold.test.end());
      pos += len;
      folds.push_back(std::move(fold));
    }
  } else {
    const bool by_user = spec.scheme == FoldScheme::louo;
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& g = by_user ? records[i].user_id : records[i].supertrial_id;
      if (!g) {
        throw DataError("video '" + records[i].video_id + "' has no " + (by_user ? "user_id" : "supertrial_id") +
                        ", required by " + fold_spec_name(spec));
      }
      groups[*g].push_back(i);
    }
    std::size_t id = 0;
    for (auto& [name, members] : groups) folds.push_back(Fold{id++, {}, members});
  }
  for (auto& fold : folds) {
    std::vector<bool> in_test(records.size(), false);
    for (auto i : fold.test) in_test[i] = true;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (!in_test[i]) fold.train.push_back(i);
  }
  return folds;
}

namespace {

Metric score(std::span<const double> pred, std::span<const double> label) {
  Metric m;
  if (pred.empty()) return m;
  m.mae = mae_metric(pred, label);
  try {
    m.scc = spearman_scc(pred, label);
  } catch (const UndefinedCorrelation& e) {
    m.error = e.what();
  }
  return m;
}

Metric mean_metric(const std::vector<const Metric*>& ms) {
  Metric out;
  double scc = 0.0, mae = 0.0;
  std::size_t nscc = 0, nmae = 0;
  for (const auto* m : ms) {
    if (m->scc) {
      scc += *m->scc;
      ++nscc;
    }
    if (m->mae) {
      mae += *m->mae;
      ++nmae;
    }
  }
  if (nscc) out.scc = scc / static_cast<double>(nscc);
  else out.error = "no fold produced a defined correlation";
  if (nmae) out.mae = mae / static_cast<double>(nmae);
  return out;
}

void fill_tasks(const Dataset& data, const std::vector<FoldResult>& folds, bool best,
                std::map<std::string, Metric>& per_task, Metric& across) {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pooled;
  for (const auto& f : folds) {
    if (f.skipped || (best && !f.best_epoch)) continue;
    const auto& preds = best ? f.best_predictions : f.predictions;
    for (std::size_t i = 0; i < f.test_ids.size(); ++i) {
      const auto& rec = data.records[data.index_of(f.test_ids[i])];
      auto& [p, l] = pooled[rec.task];
      p.push_back(preds[i]);
      l.push_back(f.labels[i]);
    }
  }
  std::vector<double> sccs;
  for (auto& [task, pl] : pooled) {
    Metric m = score(pl.first, pl.second);
    if (m.scc) sccs.push_back(*m.scc);
    per_task[task] = std::move(m);
  }
  if (sccs.empty()) {
    across.error = "no task produced a defined correlation";
    return;
  }
  try {
    across.scc = fisher_z_aggregate(sccs);
  } catch (const BoundaryError& e) {
    across.error = e.what();
  }
}

}  // namespace

FoldPredictor model_fold_predictor(const ModelConfig& model_cfg, const TrainConfig& train_cfg, bool track_best) {
  return [model_cfg, train_cfg, track_best](const Dataset& data, const Fold& fold) {
    TrainConfig tc = train_cfg;
    tc.seed = train_cfg.seed + 1000003ULL * fold.id;
    SurgFusionModel model = SurgFusionModel::init(model_cfg, tc.seed);
    const LabelScaler scaler{model_cfg.label_min, model_cfg.label_max};
    FoldPredictions out;
    train_unimodal(model, data, fold.train, tc, out.log);
    EpochHook hook;
    if (track_best) {
      hook = [&](const EpochRecord&) {
        std::vector<double> preds;
        for (auto idx : fold.test) preds.push_back(scaler.denormalize(predict(model, data, idx).fusion));
        out.per_epoch.push_back(std::move(preds));
      };
    }
    train_fusion(model, data, fold.train, tc, out.log, hook);
    for (auto idx : fold.test) {
      const VideoPrediction p = predict(model, data, idx);
      out.fusion.push_back(scaler.denormalize(p.fusion));
      for (std::size_t m = 0; m < 3; ++m) out.unimodal[m].push_back(scaler.denormalize(p.unimodal[m]));
    }
    return out;
  };
}

CvReport run_cross_validation(const Dataset& data, const CvOptions& options, const FoldPredictor& predictor) {
  const std::vector<Fold> folds = make_folds(data.records, options.spec, options.seed);
  CvReport report;
  report.scheme = fold_spec_name(options.spec);
  report.folds.resize(folds.size());

  auto run_fold = [&](std::size_t f) {
    const Fold& fold = folds[f];
    FoldResult r;
    r.fold_id = fold.id;
    for (auto idx : fold.test) {
      r.test_ids.push_back(data.records[idx].video_id);
      r.labels.push_back(data.records[idx].raw_label);
    }
    if (fold.test.size() < 2) {
      r.skipped = true;
      r.warning = "fold " + std::to_string(fold.id) + " skipped: " + std::to_string(fold.test.size()) +
                  " test record(s), at least 2 needed";
      report.folds[f] = std::move(r);
      return;
    }
    FoldPredictions p = predictor(data, fold);
    if (p.fusion.size() != fold.test.size()) throw ContractError("fold predictor returned the wrong count");
    r.predictions = p.fusion;
    r.fusion = score(r.predictions, r.labels);
    for (std::size_t m = 0; m < 3; ++m) r.unimodal[m] = score(p.unimodal[m], r.labels);
    std::optional<double> best_scc;
    for (std::size_t e = 0; e < p.per_epoch.size(); ++e) {
      Metric m = score(p.per_epoch[e], r.labels);
      if (m.scc && (!best_scc || *m.scc > *best_scc)) {
        best_scc = m.scc;
        r.best_epoch = e;
        r.best = m;
        r.best_predictions = p.per_epoch[e];
      }
    }
    r.log = std::move(p.log);
    report.folds[f] = std::move(r);
  };

  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, folds.size()));
  if (jobs == 1) {
    for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j) {
      workers.emplace_back([&] {
        for (std::size_t f = next++; f < folds.size(); f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& w : workers) w.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<const Metric*> fusion, best;
  std::array<std::vector<const Metric*>, 3> uni;
  for (const auto& r : report.folds) {
    if (r.skipped) {
      report.warnings.push_back(r.warning);
      continue;
    }
    if (!r.fusion.error.empty()) {
      report.warnings.push_back("fold " + std::to_string(r.fold_id) + ": " + r.fusion.error);
    }
    fusion.push_back(&r.fusion);
    if (r.best_epoch) best.push_back(&r.best);
    for (std::size_t m = 0; m < 3; ++m)
      if (r.unimodal[m].mae) uni[m].push_back(&r.unimodal[m]);
  }
  report.fusion = mean_metric(fusion);
  if (!best.empty()) report.best = mean_metric(best);
  for (std::size_t m = 0; m < 3; ++m)
    if (!uni[m].empty()) report.unimodal[m] = mean_metric(uni[m]);
  fill_tasks(data, report.folds, false, report.per_task, report.across_tasks);
  if (!best.empty()) {
    fill_tasks(data, report.folds, true, report.per_task_best, report.across_tasks_best);
  }
  return report;
}

CvReport run_cross_validation(const Dataset& data, const CvOptions& options, const ModelConfig& model,
                              const TrainConfig& train) {
  model.validate();
  train.validate();
  data.validate(model.label_min, model.label_max);
  return run_cross_validation(data, options, model_fold_predictor(model, train, options.track_best));
}

namespace {

std::string fmt(const std::optional<double>& v, int precision = 4) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

nlohmann::json metric_json(const Metric& m) {
  nlohmann::json j;
  j["scc"] = m.scc ? nlohmann::json(*m.scc) : nlohmann::json(nullptr);
  j["mae"] = m.mae ? nlohmann::json(*m.mae) : nlohmann::json(nullptr);
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

}  // namespace

std::string format_report(const CvReport& report) {
  std::ostringstream os;
  os << "scheme " << report.scheme << "\n";
  os << std::left << std::setw(8) << "fold" << std::setw(6) << "n" << std::setw(10) << "fusion" << std::setw(10)
     << "mae" << std::setw(10) << "rgb" << std::setw(10) << "flow" << std::setw(10) << "mask" << std::setw(10)
     << "best" << "\n";
  for (const auto& r : report.folds) {
    os << std::setw(8) << r.fold_id << std::setw(6) << r.test_ids.size();
    if (r.skipped) {
      os << "skipped\n";
      continue;
    }
    os << std::setw(10) << fmt(r.fusion.scc) << std::setw(10) << fmt(r.fusion.mae);
    for (const auto& u : r.unimodal) os << std::setw(10) << fmt(u.scc);
    os << std::setw(10) << fmt(r.best.scc) << "\n";
  }
  os << std::setw(14) << "mean" << std::setw(10) << fmt(report.fusion.scc) << std::setw(10) << fmt(report.fusion.mae);
  for (const auto& u : report.unimodal) os << std::setw(10) << fmt(u.scc);
  os << std::setw(10) << fmt(report.best.scc) << "\n";
  os << "unimodal mae: rgb " << fmt(report.unimodal[0].mae) << ", flow " << fmt(report.unimodal[1].mae) << ", mask "
     << fmt(report.unimodal[2].mae) << "\n";
  os << "best-epoch mean: scc " << fmt(report.best.scc) << ", mae " << fmt(report.best.mae) << "\n";
  for (const auto& [task, m] : report.per_task) os << "task " << task << ": scc " << fmt(m.scc) << ", mae " << fmt(m.mae) << "\n";
  os << "across tasks (fisher z): final " << fmt(report.across_tasks.scc) << ", best-epoch "
     << fmt(report.across_tasks_best.scc) << "\n";
  for (const auto& w : report.warnings) os << "warning: " << w << "\n";
  return os.str();
}

std::string report_jsonl(const CvReport& report) {
  std::ostringstream os;
  for (const auto& r : report.folds) {
    nlohmann::json j;
    j["record"] = "fold";
    j["fold"] = r.fold_id;
    j["test_ids"] = r.test_ids;
    j["skipped"] = r.skipped;
    if (r.skipped) {
      j["warning"] = r.warning;
    } else {
      j["predictions"] = r.predictions;
      j["labels"] = r.labels;
      j["fusion"] = metric_json(r.fusion);
      j["rgb"] = metric_json(r.unimodal[0]);
      j["flow"] = metric_json(r.unimodal[1]);
      j["mask"] = metric_json(r.unimodal[2]);
      if (r.best_epoch) {
        j["best_epoch"] = *r.best_epoch;
        j["best"] = metric_json(r.best);
      }
    }
    os << j.dump() << "\n";
  }
  nlohmann::json s;
  s["record"] = "summary";
  s["scheme"] = report.scheme;
  s["fusion"] = metric_json(report.fusion);
  s["rgb"] = metric_json(report.unimodal[0]);
  s["flow"] = metric_json(report.unimodal[1]);
  s["mask"] = metric_json(report.unimodal[2]);
  s["best"] = metric_json(report.best);
  nlohmann::json tasks = nlohmann::json::object();
  for (const auto& [task, m] : report.per_task) tasks[task] = metric_json(m);
  s["per_task"] = tasks;
  s["across_tasks"] = metric_json(report.across_tasks);
  nlohmann::json tasks_best = nlohmann::json::object();
  for (const auto& [task, m] : report.per_task_best) tasks_best[task] = metric_json(m);
  s["per_task_best"] = tasks_best;
  s["across_tasks_best"] = metric_json(report.across_tasks_best);
  s["warnings"] = report.warnings;
  os << s.dump() << "\n";
  return os.str();
}

}  // namespace sfn
