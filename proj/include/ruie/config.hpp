#pragma once

// Run configuration: INI-style "key = value" text with [section] headers.

#include "ruie/data_ingest.hpp"
#include "ruie/seq_encoder.hpp"
#include "ruie/synthetic.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace ruie {

struct Ablations {
  bool no_mha = false;
  bool no_gate = false;
  bool no_suim = false;

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct DataConfig {
  char delimiter = ',';
  Schema schema;
  double max_bad_fraction = 0.01;
  std::int64_t time_begin = std::numeric_limits<std::int64_t>::min();
  std::int64_t time_end = std::numeric_limits<std::int64_t>::max();
  std::size_t sample_users = 0;  // 0 keeps every user
};

struct TrainConfig {
  // model
  int d = 64;
  int H = 20;
  int heads = 4;
  EncoderKind encoder = EncoderKind::nextitnet;
  int kernel = 3;
  std::vector<int> dilations{1, 2, 4, 8, 1, 2, 4, 8};
  bool layer_norm = true;
  bool strict_relu = false;
  int q_hidden = 0;  // 0 means d
  // q-learning and gate
  double gamma = 0.5;
  double epsilon = 1e-6;
  double gate_cap = 100.0;
  // intent
  double margin = 1.0;
  int k_negatives = 10;
  // optimisation
  double learning_rate = 0.01;
  int batch_size = 256;
  int epochs = 50;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;  // global norm; <= 0 disables
  // run
  std::uint64_t seed = 0;
  double validation_fraction = 0.0;
  Ablations ablations;

  int hidden() const { return q_hidden > 0 ? q_hidden : d; }

  EncoderOptions encoder_options() const {
    return {encoder, kernel, dilations, layer_norm, 1e-5};
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (d < 1 || H < 1) fail("d and H must be >= 1");
    if (heads < 1 || d % heads != 0) fail("heads must divide d");
    if (epochs < 0) fail("epochs must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (k_negatives < 1) fail("k_negatives must be >= 1");
    if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma must lie in [0, 1)");
    if (!(epsilon > 0.0)) fail("epsilon must be > 0");
    if (!(gate_cap >= 1.0)) fail("gate_cap must be >= 1");
    if (!(margin >= 0.0)) fail("margin must be >= 0");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      fail("validation_fraction must lie in [0, 1)");
    if (encoder == EncoderKind::nextitnet && (dilations.empty() || dilations.size() % 2 != 0))
      fail("dilations must list an even number of entries");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto t = trim(tok);
    if (t.empty()) continue;
    const auto v = parse_int(t);
    if (!v) throw ConfigError("config: bad integer list '" + s + "'");
    out.push_back(static_cast<int>(*v));
  }
  return out;
}

template <typename V>
V get_or(const boost::property_tree::ptree& pt, const std::string& key, V fallback) {
  if (!pt.get_child_optional(key)) return fallback;
  try {
    return pt.get<V>(key);
  } catch (const boost::property_tree::ptree_error& e) {
    throw ConfigError("config: bad value for '" + key + "': " + e.what());
  }
}

inline bool get_bool(const boost::property_tree::ptree& pt, const std::string& key, bool fallback) {
  const auto v = pt.get_optional<std::string>(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config: bad boolean for '" + key + "': " + *v);
}

}  // namespace detail

inline boost::property_tree::ptree read_ini_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("config file not found: " + path.string());
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(path.string(), pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot parse config '" + path.string() + "': " + e.what());
  }
  return pt;
}

inline boost::property_tree::ptree parse_ini_text(const std::string& text) {
  std::istringstream in(text);
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("cannot parse config text: ") + e.what());
  }
  return pt;
}

inline TrainConfig train_config_from(const boost::property_tree::ptree& pt, TrainConfig c = {}) {
  using detail::get_bool;
  using detail::get_or;
  c.d = get_or(pt, "model.d", c.d);
  c.H = get_or(pt, "model.H", c.H);
  c.heads = get_or(pt, "model.heads", c.heads);
  c.encoder = parse_encoder_kind(get_or(pt, "model.encoder", to_string(c.encoder)));
  c.kernel = get_or(pt, "model.kernel", c.kernel);
  if (auto v = pt.get_optional<std::string>("model.dilations")) c.dilations = detail::split_ints(*v);
  c.layer_norm = get_bool(pt, "model.layer_norm", c.layer_norm);
  c.strict_relu = get_bool(pt, "model.strict_relu", c.strict_relu);
  c.q_hidden = get_or(pt, "model.q_hidden", c.q_hidden);
  c.gamma = get_or(pt, "q.gamma", c.gamma);
  c.epsilon = get_or(pt, "q.epsilon", c.epsilon);
  c.gate_cap = get_or(pt, "q.gate_cap", c.gate_cap);
  c.margin = get_or(pt, "intent.margin", c.margin);
  c.k_negatives = get_or(pt, "intent.k_negatives", c.k_negatives);
  c.learning_rate = get_or(pt, "optim.learning_rate", c.learning_rate);
  c.batch_size = get_or(pt, "optim.batch_size", c.batch_size);
  c.epochs = get_or(pt, "optim.epochs", c.epochs);
  c.beta1 = get_or(pt, "optim.beta1", c.beta1);
  c.beta2 = get_or(pt, "optim.beta2", c.beta2);
  c.adam_eps = get_or(pt, "optim.adam_eps", c.adam_eps);
  c.grad_clip = get_or(pt, "optim.grad_clip", c.grad_clip);
  c.seed = get_or(pt, "run.seed", c.seed);
  c.validation_fraction = get_or(pt, "run.validation_fraction", c.validation_fraction);
  c.ablations.no_mha = get_bool(pt, "ablation.no_mha", c.ablations.no_mha);
  c.ablations.no_gate = get_bool(pt, "ablation.no_gate", c.ablations.no_gate);
  c.ablations.no_suim = get_bool(pt, "ablation.no_suim", c.ablations.no_suim);
  c.validate();
  return c;
}

inline boost::property_tree::ptree to_ptree(const TrainConfig& c) {
  using detail::fmt_double;
  boost::property_tree::ptree pt;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  pt.put("model.d", c.d);
  pt.put("model.H", c.H);
  pt.put("model.heads", c.heads);
  pt.put("model.encoder", to_string(c.encoder));
  pt.put("model.kernel", c.kernel);
  pt.put("model.dilations", detail::join_ints(c.dilations));
  pt.put("model.layer_norm", b(c.layer_norm));
  pt.put("model.strict_relu", b(c.strict_relu));
  pt.put("model.q_hidden", c.q_hidden);
  pt.put("q.gamma", fmt_double(c.gamma));
  pt.put("q.epsilon", fmt_double(c.epsilon));
  pt.put("q.gate_cap", fmt_double(c.gate_cap));
  pt.put("intent.margin", fmt_double(c.margin));
  pt.put("intent.k_negatives", c.k_negatives);
  pt.put("optim.learning_rate", fmt_double(c.learning_rate));
  pt.put("optim.batch_size", c.batch_size);
  pt.put("optim.epochs", c.epochs);
  pt.put("optim.beta1", fmt_double(c.beta1));
  pt.put("optim.beta2", fmt_double(c.beta2));
  pt.put("optim.adam_eps", fmt_double(c.adam_eps));
  pt.put("optim.grad_clip", fmt_double(c.grad_clip));
  pt.put("run.seed", c.seed);
  pt.put("run.validation_fraction", fmt_double(c.validation_fraction));
  pt.put("ablation.no_mha", b(c.ablations.no_mha));
  pt.put("ablation.no_gate", b(c.ablations.no_gate));
  pt.put("ablation.no_suim", b(c.ablations.no_suim));
  return pt;
}

inline std::string to_ini(const boost::property_tree::ptree& pt) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, pt);
  return out.str();
}

inline std::string to_ini(const TrainConfig& c) { return to_ini(to_ptree(c)); }

inline TrainConfig train_config_from_ini(const std::string& text) {
  return train_config_from(parse_ini_text(text));
}

/// Stable hash of the canonical INI rendering.
inline std::string fingerprint(const TrainConfig& c) { return hex64(fnv1a(to_ini(c))); }

inline SynthConfig synth_config_from(const boost::property_tree::ptree& pt, SynthConfig c = {}) {
  using detail::get_or;
  c.num_users = get_or(pt, "synth.num_users", c.num_users);
  c.num_items = get_or(pt, "synth.num_items", c.num_items);
  c.num_scenarios = get_or(pt, "synth.num_scenarios", c.num_scenarios);
  c.num_topics = get_or(pt, "synth.num_topics", c.num_topics);
  c.events_per_user = get_or(pt, "synth.events_per_user", c.events_per_user);
  c.shift_probability = get_or(pt, "synth.shift_probability", c.shift_probability);
  c.scenario_affinity_concentration =
      get_or(pt, "synth.scenario_affinity_concentration", c.scenario_affinity_concentration);
  c.seed = get_or(pt, "synth.seed", c.seed);
  c.validate();
  return c;
}

inline boost::property_tree::ptree to_ptree(const SynthConfig& c) {
  boost::property_tree::ptree pt;
  pt.put("synth.num_users", c.num_users);
  pt.put("synth.num_items", c.num_items);
  pt.put("synth.num_scenarios", c.num_scenarios);
  pt.put("synth.num_topics", c.num_topics);
  pt.put("synth.events_per_user", c.events_per_user);
  pt.put("synth.shift_probability", detail::fmt_double(c.shift_probability));
  pt.put("synth.scenario_affinity_concentration",
         detail::fmt_double(c.scenario_affinity_concentration));
  pt.put("synth.seed", c.seed);
  return pt;
}

inline DataConfig data_config_from(const boost::property_tree::ptree& pt, DataConfig c = {}) {
  using detail::get_or;
  const auto delim = get_or(pt, "data.delimiter", std::string(1, c.delimiter));
  if (delim == "tab" || delim == "\\t")
    c.delimiter = '\t';
  else if (delim.size() == 1)
    c.delimiter = delim[0];
  else
    throw ConfigError("config: data.delimiter must be a single character or 'tab'");
  c.schema.user_id = get_or(pt, "data.user_column", c.schema.user_id);
  c.schema.item_id = get_or(pt, "data.item_column", c.schema.item_id);
  c.schema.scenario_id = get_or(pt, "data.scenario_column", c.schema.scenario_id);
  c.schema.behavior = get_or(pt, "data.behavior_column", c.schema.behavior);
  c.schema.timestamp = get_or(pt, "data.timestamp_column", c.schema.timestamp);
  c.max_bad_fraction = get_or(pt, "data.max_bad_fraction", c.max_bad_fraction);
  c.time_begin = get_or(pt, "data.time_begin", c.time_begin);
  c.time_end = get_or(pt, "data.time_end", c.time_end);
  c.sample_users = get_or(pt, "data.sample_users", c.sample_users);
  return c;
}

}  // namespace ruie
