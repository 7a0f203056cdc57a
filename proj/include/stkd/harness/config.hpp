#pragma once

// Run configuration. One flat JSON object; every field can also be set from
// the command line as key=value, where value is parsed as JSON when possible
// and taken as a plain string otherwise.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stkd/binary_io.hpp"
#include "stkd/data/synthetic.hpp"
#include "stkd/errors.hpp"

namespace stkd::harness {

using nlohmann::json;

struct TrainConfig {
  std::string stage = "distill";  // pretrain | distill
  std::size_t epochs = 50;          // student epochs
  std::size_t teacher_epochs = 50;
  std::size_t batch_size = 128;
  std::size_t n = 128;
  std::size_t d = 256;
  std::size_t heads = 2;
  std::size_t layers = 2;
  std::vector<std::size_t> fanouts = {10, 10};
  double tau = 3.0;
  double alpha = 0.2;
  double lr = 1e-3;
  double teacher_lr = 1e-3;
  double dropout = 0.1;
  double init_std = 0.02;
  double teacher_embedding_std = 0.1;
  std::uint64_t seed = 42;
  std::size_t patience = 5;
  std::size_t train_cap_per_user = 0;  // 0 keeps every training pair
  std::string precision = "f64";     // f32 | f64
  std::size_t n_negatives = 100;
  std::vector<std::size_t> k_list = {5, 10, 20};
  std::size_t threads = 1;  // evaluation workers
  bool cache_soft_labels = true;
  bool use_soft_label_cache = false;  // distill from the cache instead of a live teacher
  std::string variant = "full";
  std::string strategy = "stkd";
  // Artifact paths.
  std::string events_path;
  std::string dataset_path = "dataset.bin";
  std::string graph_path = "graph.bin";
  std::string teacher_path = "teacher.bin";
  std::string soft_labels_path = "soft_labels.bin";
  std::string student_path = "student.bin";
  std::string out_dir = ".";
  // Synthetic generator settings for gen-synth.
  data::SyntheticConfig synthetic;
};

namespace detail {

template <class V>
V as(const json& j, const std::string& key) {
  try {
    return j.get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "': unexpected value " + j.dump());
  }
}

using Setter = std::function<void(TrainConfig&, const json&)>;
using Getter = std::function<json(const TrainConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <class V>
Field field(V TrainConfig::*m, const std::string& key) {
  return {[m, key](TrainConfig& c, const json& j) { c.*m = as<V>(j, key); },
          [m](const TrainConfig& c) { return json(c.*m); }};
}

template <class V>
Field synth(V data::SyntheticConfig::*m, const std::string& key) {
  return {[m, key](TrainConfig& c, const json& j) { c.synthetic.*m = as<V>(j, key); },
          [m](const TrainConfig& c) { return json(c.synthetic.*m); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> f = [] {
    std::map<std::string, Field> m;
    auto add = [&]<class V>(const std::string& k, V TrainConfig::*p) { m.emplace(k, field(p, k)); };
    add("stage", &TrainConfig::stage);
    add("epochs", &TrainConfig::epochs);
    add("teacher_epochs", &TrainConfig::teacher_epochs);
    add("batch_size", &TrainConfig::batch_size);
    add("n", &TrainConfig::n);
    add("d", &TrainConfig::d);
    add("heads", &TrainConfig::heads);
    add("layers", &TrainConfig::layers);
    add("fanouts", &TrainConfig::fanouts);
    add("tau", &TrainConfig::tau);
    add("alpha", &TrainConfig::alpha);
    add("lr", &TrainConfig::lr);
    add("teacher_lr", &TrainConfig::teacher_lr);
    add("dropout", &TrainConfig::dropout);
    add("init_std", &TrainConfig::init_std);
    add("teacher_embedding_std", &TrainConfig::teacher_embedding_std);
    add("seed", &TrainConfig::seed);
    add("patience", &TrainConfig::patience);
    add("train_cap_per_user", &TrainConfig::train_cap_per_user);
    add("precision", &TrainConfig::precision);
    add("n_negatives", &TrainConfig::n_negatives);
    add("k_list", &TrainConfig::k_list);
    add("threads", &TrainConfig::threads);
    add("cache_soft_labels", &TrainConfig::cache_soft_labels);
    add("use_soft_label_cache", &TrainConfig::use_soft_label_cache);
    add("variant", &TrainConfig::variant);
    add("strategy", &TrainConfig::strategy);
    add("events_path", &TrainConfig::events_path);
    add("dataset_path", &TrainConfig::dataset_path);
    add("graph_path", &TrainConfig::graph_path);
    add("teacher_path", &TrainConfig::teacher_path);
    add("soft_labels_path", &TrainConfig::soft_labels_path);
    add("student_path", &TrainConfig::student_path);
    add("out_dir", &TrainConfig::out_dir);
    auto s = [&]<class V>(const std::string& k, V data::SyntheticConfig::*p) {
      m.emplace("synthetic." + k, synth(p, "synthetic." + k));
    };
    s("n_users", &data::SyntheticConfig::n_users);
    s("n_takeaways", &data::SyntheticConfig::n_takeaways);
    s("n_regions", &data::SyntheticConfig::n_regions);
    s("n_categories", &data::SyntheticConfig::n_categories);
    s("n_brands", &data::SyntheticConfig::n_brands);
    s("events_per_user", &data::SyntheticConfig::events_per_user);
    s("noise", &data::SyntheticConfig::noise);
    s("stay_probability", &data::SyntheticConfig::stay_probability);
    s("preference_weight", &data::SyntheticConfig::preference_weight);
    s("slot_weight", &data::SyntheticConfig::slot_weight);
    s("n_pairs", &data::SyntheticConfig::n_pairs);
    s("pair_probability", &data::SyntheticConfig::pair_probability);
    s("region_spacing_km", &data::SyntheticConfig::region_spacing_km);
    s("start_timestamp", &data::SyntheticConfig::start_timestamp);
    s("seed", &data::SyntheticConfig::seed);
    return m;
  }();
  return f;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (auto& [k, _] : detail::fields()) out.push_back(k);
  return out;
}

inline void set_key(TrainConfig& c, const std::string& key, const json& value) {
  const auto& f = detail::fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(c, value);
}

inline json get_key(const TrainConfig& c, const std::string& key) {
  const auto& f = detail::fields();
  const auto it = f.find(key);
  if (it == f.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(c);
}

/// Applies "key=value". The value is read as JSON if it parses, otherwise as
/// a string, so `variant=no_sp` and `fanouts=[5,5]` both work.
inline void apply_override(TrainConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_key(c, key, value);
}

inline void validate(const TrainConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (c.stage != "pretrain" && c.stage != "distill") fail("stage must be pretrain or distill");
  if (c.batch_size == 0 || c.n == 0 || c.d == 0 || c.heads == 0 || c.layers == 0) fail("sizes must be positive");
  if (c.d % c.heads != 0) fail("d must be divisible by heads");
  if (c.fanouts.empty()) fail("fanouts must list at least one hop");
  for (auto s : c.fanouts)
    if (s == 0) fail("fanouts must be positive");
  if (!(c.tau > 0.0)) fail("tau must be positive");
  if (!(c.alpha >= 0.0 && c.alpha <= 1.0)) fail("alpha must be in [0,1]");
  if (!(c.lr > 0.0) || !(c.teacher_lr > 0.0)) fail("learning rates must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) fail("dropout must be in [0,1)");
  if (!(c.init_std > 0.0) || !(c.teacher_embedding_std > 0.0)) fail("init scales must be positive");
  if (c.patience == 0) fail("patience must be positive");
  if (c.precision != "f32" && c.precision != "f64") fail("precision must be f32 or f64");
  if (c.n_negatives == 0) fail("n_negatives must be positive");
  if (c.k_list.empty()) fail("k_list must not be empty");
  for (auto k : c.k_list)
    if (k == 0) fail("k values must be positive");
  if (c.threads == 0) fail("threads must be positive");
}

inline json to_json(const TrainConfig& c) {
  json j = json::object();
  for (auto& [k, f] : detail::fields()) j[k] = f.get(c);
  return j;
}

/// Builds a config from defaults plus the keys present in `j`. Nested
/// objects (e.g. {"synthetic": {"noise": 0.3}}) are flattened to dotted keys.
inline TrainConfig from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  std::function<void(const json&, const std::string&)> walk = [&](const json& o, const std::string& prefix) {
    for (auto it = o.begin(); it != o.end(); ++it) {
      const auto key = prefix + it.key();
      if (it->is_object() && !detail::fields().contains(key))
        walk(*it, key + ".");
      else
        set_key(c, key, *it);
    }
  };
  walk(j, "");
  validate(c);
  return c;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json j = json::parse(in, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return from_json(j);
}

inline std::uint64_t config_hash(const TrainConfig& c) {
  Fnv1a h;
  h.str(to_json(c).dump());
  return h.value();
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace stkd::harness
