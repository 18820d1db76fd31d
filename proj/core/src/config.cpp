#include "sfn/config.hpp"

#include <array>
#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "sfn/evaluation.hpp"
#include "sfn/io.hpp"

namespace sfn {

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  synth.seed = s;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  parse_fold_spec(scheme);
  if (jobs == 0) throw ConfigError("experiment.jobs must be at least 1");
  if (synth.dim != model.dim) {
    throw ConfigError("synth.dim (" + std::to_string(synth.dim) + ") must equal model.dim (" +
                      std::to_string(model.dim) + ")");
  }
}

ExperimentConfig profile_config(const std::string& name) {
  ExperimentConfig c;
  c.profile = name;
  if (name == "desk") return c;
  if (name == "paper") {
    c.model.dim = 256;
    c.model.fusion_nets = 10;
    c.model.heads = 2;
    c.train = TrainConfig::paper();
    c.train.loss_alpha = 0.5;
    c.synth.dim = 256;
    return c;
  }
  throw ConfigError("experiment.profile must be desk or paper, got '" + name + "'");
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError(key + ": cannot parse '" + v + "'");
  if constexpr (std::is_unsigned_v<T>) {
    if (!v.empty() && v[0] == '-') throw ConfigError(key + ": must be non-negative, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string show(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define SFN_FIELD(path, type)                                                                                   \
  Field {                                                                                                       \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.path = parse_number<type>(k, v); }, \
        [](const ExperimentConfig& c) { return show(static_cast<double>(c.path)); }                             \
  }
#define SFN_BOOL(path)                                                                                   \
  Field {                                                                                                \
    [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.path = parse_bool(k, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.path ? "true" : "false"); }                 \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    t["model.dim"] = SFN_FIELD(model.dim, std::size_t);
    t["model.kernel_width"] = SFN_FIELD(model.kernel_width, std::size_t);
    t["model.fusion_nets"] = SFN_FIELD(model.fusion_nets, std::size_t);
    t["model.heads"] = SFN_FIELD(model.heads, std::size_t);
    t["model.dropout"] = SFN_FIELD(model.dropout, double);
    t["model.policy_temperature"] = SFN_FIELD(model.policy_temperature, double);
    t["model.attention_eps"] = SFN_FIELD(model.attention_eps, double);
    t["model.trainable_fusion_init"] = SFN_BOOL(model.trainable_fusion_init);
    t["model.fusionnet_on_stage_outputs"] = SFN_BOOL(model.fusionnet_on_stage_outputs);
    t["model.label_min"] = SFN_FIELD(model.label_min, double);
    t["model.label_max"] = SFN_FIELD(model.label_max, double);

    t["train.phase1_epochs"] = SFN_FIELD(train.phase1.epochs, std::size_t);
    t["train.phase1_batch_size"] = SFN_FIELD(train.phase1.batch_size, std::size_t);
    t["train.phase1_lr_max"] = SFN_FIELD(train.phase1.lr_max, double);
    t["train.phase1_lr_min"] = SFN_FIELD(train.phase1.lr_min, double);
    t["train.phase1_weight_decay"] = SFN_FIELD(train.phase1.weight_decay, double);
    t["train.phase1_momentum"] = SFN_FIELD(train.phase1.momentum, double);
    t["train.phase2_epochs"] = SFN_FIELD(train.phase2.epochs, std::size_t);
    t["train.phase2_batch_size"] = SFN_FIELD(train.phase2.batch_size, std::size_t);
    t["train.phase2_lr_max"] = SFN_FIELD(train.phase2.lr_max, double);
    t["train.phase2_lr_min"] = SFN_FIELD(train.phase2.lr_min, double);
    t["train.phase2_weight_decay"] = SFN_FIELD(train.phase2.weight_decay, double);
    t["train.loss_alpha"] = SFN_FIELD(train.loss_alpha, double);
    t["train.train_segments"] = SFN_FIELD(train.train_segments, std::size_t);
    t["train.grad_clip"] = SFN_FIELD(train.grad_clip, double);

    t["synth.n_videos"] = SFN_FIELD(synth.n_videos, std::size_t);
    t["synth.segments"] = SFN_FIELD(synth.segments, std::size_t);
    t["synth.dim"] = SFN_FIELD(synth.dim, std::size_t);
    t["synth.mode"] = Field{[](ExperimentConfig& c, const std::string&, const std::string& v) { c.synth.mode = parse_synth_mode(v); },
                            [](const ExperimentConfig& c) { return synth_mode_name(c.synth.mode); }};
    t["synth.single_modality"] =
        Field{[](ExperimentConfig& c, const std::string&, const std::string& v) { c.synth.single_modality = parse_modality(v); },
              [](const ExperimentConfig& c) { return std::string(modality_name(c.synth.single_modality)); }};
    t["synth.noise"] = SFN_FIELD(synth.noise, double);
    t["synth.amplitude"] = SFN_FIELD(synth.amplitude, double);
    t["synth.drift"] = SFN_FIELD(synth.drift, double);
    t["synth.users"] = SFN_FIELD(synth.users, std::size_t);
    t["synth.supertrials"] = SFN_FIELD(synth.supertrials, std::size_t);
    t["synth.tasks"] = SFN_FIELD(synth.tasks, std::size_t);
    t["synth.label_min"] = SFN_FIELD(synth.label_min, double);
    t["synth.label_max"] = SFN_FIELD(synth.label_max, double);

    t["data.source"] = Field{[](ExperimentConfig& c, const std::string&, const std::string& v) {
                               if (v != "index" && v != "synth") throw ConfigError("data.source must be index or synth, got '" + v + "'");
                               c.data_source = v;
                             },
                             [](const ExperimentConfig& c) { return c.data_source; }};
    t["data.index"] = Field{[](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_index = v; },
                            [](const ExperimentConfig& c) { return c.data_index; }};
    t["experiment.profile"] = Field{[](ExperimentConfig& c, const std::string&, const std::string& v) { c.profile = v; },
                                    [](const ExperimentConfig& c) { return c.profile; }};
    t["experiment.scheme"] = Field{[](ExperimentConfig& c, const std::string&, const std::string& v) { c.scheme = v; },
                                   [](const ExperimentConfig& c) { return c.scheme; }};
    t["experiment.out"] = Field{[](ExperimentConfig& c, const std::string&, const std::string& v) { c.out = v; },
                                [](const ExperimentConfig& c) { return c.out; }};
    t["experiment.seed"] =
        Field{[](ExperimentConfig& c, const std::string& k, const std::string& v) { c.apply_seed(parse_number<std::uint64_t>(k, v)); },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }};
    t["experiment.jobs"] = SFN_FIELD(jobs, std::size_t);
    t["experiment.track_best"] = SFN_BOOL(track_best);
    return t;
  }();
  return table;
}

#undef SFN_FIELD
#undef SFN_BOOL

}  // namespace

void set_config_value(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto it = fields().find(dotted_key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + dotted_key + "'");
  it->second.set(cfg, dotted_key, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  std::string profile = "desk";
  if (auto p = tree.get_optional<std::string>("experiment.profile")) profile = *p;
  ExperimentConfig cfg = profile_config(profile);
  // Seed first so explicit synth/train values are not clobbered by it.
  if (auto s = tree.get_optional<std::string>("experiment.seed")) set_config_value(cfg, "experiment.seed", *s);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config key '" + section + "' must be inside a section");
    for (const auto& [key, value] : body) {
      const std::string dotted = section + "." + key;
      if (dotted == "experiment.seed") continue;
      set_config_value(cfg, dotted, value.data());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::string to_config_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << field.get(cfg) << '\n';
  }
  return os.str();
}

}  // namespace sfn
