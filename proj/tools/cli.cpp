#include "cli.hpp"

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sfn/config.hpp"
#include "sfn/evaluation.hpp"
#include "sfn/gradsuite.hpp"
#include "sfn/io.hpp"
#include "sfn/synthdata.hpp"
#include "sfn/training.hpp"

namespace sfn::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "key=value config file");
    app->add_option("--set", overrides, "override, section.key=value (repeatable)");
    app->add_option("--seed", seed, "experiment seed");
    app->add_option("-o,--out", out, "output directory");
  }

  void attach_data(CLI::App* app) { app->add_option("--data", data, "dataset index.csv (sets data.index)"); }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_path.empty() ? profile_config("desk") : load_config(config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + o + "'");
      set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    if (seed) cfg.apply_seed(*seed);
    if (out) cfg.out = *out;
    if (data) {
      cfg.data_index = *data;
      cfg.data_source = "index";
    }
    return cfg;
  }
};

Dataset obtain_dataset(const ExperimentConfig& cfg, const std::string& command) {
  Dataset data;
  if (cfg.data_source == "synth") {
    data = generate_dataset(cfg.synth).data;
  } else {
    if (cfg.data_index.empty()) {
      throw ConfigError(command + ": data.index is required (pass --data, or set data.source = synth)");
    }
    data = load_dataset(cfg.data_index);
  }
  data.validate(cfg.model.label_min, cfg.model.label_max);
  if (!data.features.empty() && data.features[0][0].dim() != cfg.model.dim) {
    throw ConfigError("model.dim (" + std::to_string(cfg.model.dim) + ") does not match feature width " +
                      std::to_string(data.features[0][0].dim()));
  }
  return data;
}

ParamList all_parameters(const SurgFusionModel& model) {
  ParamList params = model.unimodal_parameters();
  const ParamList f = model.fusion_parameters();
  params.insert(params.end(), f.begin(), f.end());
  return params;
}

std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> ids(data.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

int cmd_gen(const ExperimentConfig& cfg, std::ostream& out) {
  cfg.synth.validate();
  const SynthDataset synth = generate_dataset(cfg.synth);
  const fs::path dir = fs::path(cfg.out) / "data";
  save_dataset(dir, synth.data);
  write_text(fs::path(cfg.out) / "config.ini", to_config_text(cfg));
  out << "wrote " << synth.data.size() << " videos (" << synth_mode_name(cfg.synth.mode) << ") to " << dir.string()
      << "\n";
  out << "digest " << directory_sha256(dir) << "\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
  cfg.validate();
  const Dataset data = obtain_dataset(cfg, "train");
  SurgFusionModel model = SurgFusionModel::init(cfg.model, cfg.train.seed);
  const auto ids = all_indices(data);
  std::vector<EpochRecord> log;
  train_unimodal(model, data, ids, cfg.train, log);
  const fs::path base(cfg.out);
  save_checkpoint(base / "checkpoint_phase1", model.unimodal_parameters());
  train_fusion(model, data, ids, cfg.train, log);
  save_checkpoint(base / "checkpoint", all_parameters(model));
  write_text(base / "epoch_log.jsonl", epoch_log_jsonl(log));
  write_text(base / "config.ini", to_config_text(cfg));
  out << "trained on " << data.size() << " videos; final fusion loss " << log.back().mean_loss << "\n";
  out << "checkpoint " << (base / "checkpoint").string() << "\n";
  return kExitOk;
}

SurgFusionModel load_model(const ExperimentConfig& cfg, const std::string& checkpoint) {
  SurgFusionModel model = SurgFusionModel::init(cfg.model, cfg.train.seed);
  load_checkpoint(checkpoint, all_parameters(model));
  return model;
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& ids_text,
             std::ostream& out) {
  cfg.validate();
  const Dataset data = obtain_dataset(cfg, "eval");
  SurgFusionModel model = load_model(cfg, checkpoint);
  std::vector<std::size_t> ids;
  if (ids_text.empty()) {
    ids = all_indices(data);
  } else {
    for (const auto& id : split_list(ids_text)) ids.push_back(data.index_of(id));
  }
  const LabelScaler scaler{cfg.model.label_min, cfg.model.label_max};
  std::vector<double> labels, fusion;
  std::array<std::vector<double>, 3> uni;
  for (auto i : ids) {
    const VideoPrediction p = predict(model, data, i);
    labels.push_back(data.records[i].raw_label);
    fusion.push_back(scaler.denormalize(p.fusion));
    for (std::size_t m = 0; m < 3; ++m) uni[m].push_back(scaler.denormalize(p.unimodal[m]));
  }
  nlohmann::json j;
  auto metric = [&](const std::string& name, const std::vector<double>& pred) {
    std::optional<double> scc;
    std::string error;
    try {
      scc = spearman_scc(pred, labels);
    } catch (const UndefinedCorrelation& e) {
      error = e.what();
    }
    const double mae = mae_metric(pred, labels);
    out << std::left << std::setw(8) << name << " scc " << fmt(scc) << "  mae " << fmt(mae)
        << (error.empty() ? "" : "  (" + error + ")") << "\n";
    j[name] = {{"scc", scc ? nlohmann::json(*scc) : nlohmann::json(nullptr)}, {"mae", mae}};
  };
  metric("fusion", fusion);
  for (auto mod : kModalities) metric(std::string(modality_name(mod)), uni[static_cast<std::size_t>(mod)]);
  j["videos"] = ids.size();
  write_text(fs::path(cfg.out) / "eval.json", j.dump(2) + "\n");
  return kExitOk;
}

int cmd_cv(ExperimentConfig cfg, const std::string& heads_text, std::optional<std::size_t> jobs, std::ostream& out,
           std::ostream& err) {
  if (jobs) cfg.jobs = *jobs;
  cfg.validate();
  const Dataset data = obtain_dataset(cfg, "cv");
  CvOptions opts;
  opts.spec = parse_fold_spec(cfg.scheme);
  opts.seed = cfg.seed;
  opts.jobs = cfg.jobs;
  opts.track_best = cfg.track_best;
  const fs::path base(cfg.out);

  if (heads_text.empty()) {
    const CvReport report = run_cross_validation(data, opts, cfg.model, cfg.train);
    const std::string jsonl = report_jsonl(report);
    write_text(base / "report.txt", format_report(report));
    write_text(base / "report.jsonl", jsonl);
    const std::string digest = sha256_hex(jsonl);
    write_text(base / "digest.txt", digest + "\n");
    write_text(base / "config.ini", to_config_text(cfg));
    out << format_report(report) << "digest " << digest << "\n";
    return kExitOk;
  }

  std::vector<std::size_t> heads;
  for (const auto& h : split_list(heads_text)) {
    try {
      heads.push_back(std::stoul(h));
    } catch (const std::exception&) {
      throw ConfigError("--heads expects a comma-separated list of integers, got '" + heads_text + "'");
    }
  }
  std::ostringstream table;
  table << "heads\tfusion_scc\tfusion_mae\tbest_scc\tbest_mae\tstatus\n";
  bool stable = true;
  for (auto h : heads) {
    ExperimentConfig c = cfg;
    c.model.heads = h;
    c.model.validate();
    const fs::path dir = base / ("heads" + std::to_string(h));
    try {
      const CvReport report = run_cross_validation(data, opts, c.model, c.train);
      write_text(dir / "report.txt", format_report(report));
      write_text(dir / "report.jsonl", report_jsonl(report));
      table << h << '\t' << fmt(report.fusion.scc) << '\t' << fmt(report.fusion.mae) << '\t' << fmt(report.best.scc)
            << '\t' << fmt(report.best.mae) << "\tok\n";
    } catch (const NumericalError& e) {
      stable = false;
      err << "heads " << h << ": " << e.what() << "\n";
      table << h << "\tn/a\tn/a\tn/a\tn/a\tnon-finite loss\n";
    }
  }
  write_text(base / "heads.tsv", table.str());
  write_text(base / "config.ini", to_config_text(cfg));
  out << table.str();
  return stable ? kExitOk : kExitNumerical;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t seeds, bool pipeline, std::ostream& out) {
  GradSuiteOptions opts;
  opts.first_seed = seed;
  opts.seeds = seeds;
  opts.pipeline = pipeline;
  const GradSuiteResult result = run_grad_suite(opts);
  for (const auto& c : result.cases) {
    out << std::left << std::setw(18) << c.name << (c.failures ? "FAIL" : "ok  ") << "  max rel " << std::scientific
        << std::setprecision(2) << c.worst.max_rel_error << std::defaultfloat << "  (" << c.runs << " seeds";
    if (c.failures) out << ", " << c.failures << " failed; worst seed " << c.worst_seed << ": " << c.worst.worst;
    out << ")\n";
  }
  out << (result.passed ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return result.passed ? kExitOk : kExitNumerical;
}

int cmd_trace(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& videos,
              std::ostream& out) {
  cfg.validate();
  const Dataset data = obtain_dataset(cfg, "trace");
  SurgFusionModel model = load_model(cfg, checkpoint);
  std::vector<std::size_t> ids;
  if (videos.empty()) {
    ids = all_indices(data);
  } else {
    for (const auto& id : split_list(videos)) ids.push_back(data.index_of(id));
  }
  const fs::path dir = fs::path(cfg.out) / "trace";
  Rng unused(0);
  std::size_t files = 0;
  for (auto i : ids) {
    const auto& f = data.features[i];
    UnimodalFeatures feats = build_unimodal_features(model, {&f[0].values}, {&f[1].values}, {&f[2].values});
    const FusionOutput fo = multimodal_forward(model.fusion, feats, false, unused, {}, /*record_trace=*/true);
    for (std::size_t s = 0; s < kStageCount; ++s) {
      write_trace_csv(dir / (data.records[i].video_id + "_stage" + std::to_string(s + 1) + ".csv"),
                      fo.traces[0][s].modality_mass);
      ++files;
    }
  }
  out << "wrote " << files << " trace files to " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal skill-score regression: data generation, training and evaluation", "sfn"};
  app.require_subcommand(1);

  Common gen_opts, train_opts, eval_opts, cv_opts, trace_opts;
  auto* gen = app.add_subcommand("gen", "write a synthetic dataset");
  gen_opts.attach(gen);

  auto* train = app.add_subcommand("train", "two-phase training; writes checkpoints and an epoch log");
  train_opts.attach(train);
  train_opts.attach_data(train);

  std::string eval_checkpoint, eval_ids;
  auto* eval = app.add_subcommand("eval", "metrics of a checkpoint on a set of videos");
  eval_opts.attach(eval);
  eval_opts.attach_data(eval);
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint directory")->required();
  eval->add_option("--ids", eval_ids, "comma-separated video ids (default: all)");

  std::string heads;
  std::optional<std::size_t> jobs;
  auto* cv = app.add_subcommand("cv", "cross-validation report");
  cv_opts.attach(cv);
  cv_opts.attach_data(cv);
  cv->add_option("--heads", heads, "attention-head ablation, e.g. 1,2,4,8");
  cv->add_option("-j,--jobs", jobs, "folds trained concurrently");

  std::uint64_t gc_seed = 1;
  std::size_t gc_seeds = 100;
  bool gc_ops_only = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gc_seed, "first seed");
  gradcheck->add_option("--seeds", gc_seeds, "number of seeds")->check(CLI::PositiveNumber);
  gradcheck->add_flag("--ops-only", gc_ops_only, "skip the attention and fusion pipeline cases");

  std::string trace_checkpoint, trace_videos;
  auto* trace = app.add_subcommand("trace", "per-window modality attention CSVs");
  trace_opts.attach(trace);
  trace_opts.attach_data(trace);
  trace->add_option("--checkpoint", trace_checkpoint, "checkpoint directory")->required();
  trace->add_option("--videos", trace_videos, "comma-separated video ids (default: all)");

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_opts.resolve(), out);
    if (*train) return cmd_train(train_opts.resolve(), out);
    if (*eval) return cmd_eval(eval_opts.resolve(), eval_checkpoint, eval_ids, out);
    if (*cv) return cmd_cv(cv_opts.resolve(), heads, jobs, out, err);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_seeds, !gc_ops_only, out);
    if (*trace) return cmd_trace(trace_opts.resolve(), trace_checkpoint, trace_videos, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace sfn::cli
