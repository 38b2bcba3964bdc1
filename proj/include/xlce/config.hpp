#pragma once

#include <json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "xlce/channel.hpp"
#include "xlce/dataset.hpp"
#include "xlce/experiment.hpp"
#include "xlce/models.hpp"
#include "xlce/rng.hpp"
#include "xlce/train.hpp"

namespace xlce {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// schema

namespace cfgdetail {

struct Section {
  const char* name;
  std::set<std::string> keys;
};

inline const std::set<std::string>& root_keys() {
  static const std::set<std::string> k = {"schema_version", "seed",  "array",
                                          "channel",        "signal", "generate",
                                          "model",          "train",  "experiment"};
  return k;
}

inline const std::vector<Section>& sections() {
  static const std::vector<Section> s = {
      {"array", {"m", "lambda_m", "spacing_m"}},
      {"channel", {"paths", "far_paths", "gain_variance", "r_range_m"}},
      {"signal", {"pilot_power", "snr_db", "snr_range_db", "noiseless"}},
      {"generate", {"n_samples"}},
      {"model", {"type", "feature_maps", "heads", "ffn_hidden"}},
      {"train", {"n_train", "n_val", "batch_size", "epochs", "learning_rate", "augment"}},
      {"experiment",
       {"scenario", "snr_grid_db", "l0_values", "sweep_snr_db", "n_test", "cov_samples",
        "estimators", "omp_angles", "omp_rings"}},
  };
  return s;
}

}  // namespace cfgdetail

/// Unknown keys anywhere in the config are hard errors (typos must not pass
/// silently).
inline void check_unknown_keys(const json& cfg) {
  if (!cfg.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, value] : cfg.items()) {
    if (!cfgdetail::root_keys().count(key))
      throw std::invalid_argument("config: unknown key \"" + key + "\"");
    for (const auto& sec : cfgdetail::sections()) {
      if (key == sec.name) {
        if (!value.is_object())
          throw std::invalid_argument("config: \"" + key + "\" must be an object");
        for (const auto& [sub, subval] : value.items()) {
          (void)subval;
          if (!sec.keys.count(sub))
            throw std::invalid_argument("config: unknown key \"" + key + "." + sub + "\"");
        }
      }
    }
  }
}

inline json merge_configs(json base, const json& overlay) {
  if (!overlay.is_object()) return overlay;
  if (!base.is_object()) base = json::object();
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_object())
      base[key] = merge_configs(base.contains(key) ? base[key] : json::object(), value);
    else
      base[key] = value;
  }
  return base;
}

inline json profile_defaults(const std::string& name) {
  if (name.empty() || name == "none") return json::object();
  if (name == "desk") {
    return json{
        {"schema_version", kSchemaVersion},
        {"seed", 1},
        {"array", {{"m", 64}, {"lambda_m", 0.01}}},
        {"channel",
         {{"paths", 6}, {"far_paths", 1}, {"gain_variance", 1.0}, {"r_range_m", "auto"}}},
        {"signal", {{"pilot_power", 1.0}, {"snr_range_db", json::array({-10.0, 20.0})}}},
        {"generate", {{"n_samples", 2500}}},
        {"model",
         {{"type", "matcenet"}, {"feature_maps", 32}, {"heads", 4}, {"ffn_hidden", 128}}},
        {"train",
         {{"n_train", 2000},
          {"n_val", 500},
          {"batch_size", 32},
          {"epochs", 30},
          {"learning_rate", 1e-3}}},
        {"experiment",
         {{"scenario", "hybrid"},
          {"snr_grid_db", json::array({-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0})},
          {"sweep_snr_db", 10.0},
          {"n_test", 2000},
          {"cov_samples", 2000},
          {"estimators", json::array({"ls", "lmmse", "hyomp"})},
          {"omp_angles", 0},
          {"omp_rings", 7}}},
    };
  }
  if (name == "paper") {
    json cfg = profile_defaults("desk");
    cfg["array"]["m"] = 256;
    cfg["channel"]["r_range_m"] = json::array({10.0, 80.0});
    cfg["generate"]["n_samples"] = 10000;
    cfg["model"]["feature_maps"] = 64;
    cfg["model"]["ffn_hidden"] = 256;
    cfg["train"]["n_train"] = 9000;
    cfg["train"]["n_val"] = 1000;
    cfg["train"]["batch_size"] = 128;
    cfg["train"]["epochs"] = 200;
    cfg["experiment"]["n_test"] = 10000;
    return cfg;
  }
  throw std::invalid_argument("unknown profile '" + name + "' (expected desk or paper)");
}

inline json parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config parse error in " + path + ": " + e.what());
  }
  check_unknown_keys(cfg);
  return cfg;
}

/// profile defaults -> config file -> explicit seed override.
inline json resolve_config(const std::string& profile, const std::string& config_path,
                           const std::uint64_t* seed_override = nullptr) {
  json cfg = profile_defaults(profile);
  if (!config_path.empty()) cfg = merge_configs(cfg, parse_config_file(config_path));
  if (seed_override) cfg["seed"] = *seed_override;
  if (!cfg.contains("schema_version")) cfg["schema_version"] = kSchemaVersion;
  if (cfg["schema_version"].get<int>() != kSchemaVersion)
    throw std::invalid_argument("config: unsupported schema_version");
  check_unknown_keys(cfg);
  return cfg;
}

inline std::string config_hash(const json& resolved) {
  return hex_u64(fnv1a64(resolved.dump()));
}

// ---------------------------------------------------------------------------
// typed extraction (missing required keys are named)

inline const json* find_key(const json& cfg, const std::string& section,
                            const std::string& key) {
  if (!cfg.contains(section)) return nullptr;
  const json& s = cfg.at(section);
  if (!s.contains(key)) return nullptr;
  return &s.at(key);
}

template <class T>
T require_key(const json& cfg, const std::string& section, const std::string& key) {
  const json* v = find_key(cfg, section, key);
  if (!v)
    throw std::invalid_argument("config: missing required key \"" + section + "." + key +
                                "\"");
  try {
    return v->get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: bad value for \"" + section + "." + key +
                                "\": " + e.what());
  }
}

template <class T>
T key_or(const json& cfg, const std::string& section, const std::string& key, T def) {
  const json* v = find_key(cfg, section, key);
  if (!v) return def;
  try {
    return v->get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: bad value for \"" + section + "." + key +
                                "\": " + e.what());
  }
}

inline std::uint64_t seed_from(const json& cfg) {
  if (!cfg.contains("seed")) return 1;
  return cfg.at("seed").get<std::uint64_t>();
}

inline ArrayConfig array_from(const json& cfg) {
  ArrayConfig a;
  a.m = require_key<int>(cfg, "array", "m");
  a.lambda_m = require_key<double>(cfg, "array", "lambda_m");
  a.spacing_m = key_or<double>(cfg, "array", "spacing_m", 0.0);
  a.validate();
  return a;
}

/// r_range "auto" rescales the near-field sampling window to
/// (0.1, 0.8) x Rayleigh distance so "near field" stays meaningful at any M.
inline std::pair<double, double> resolve_r_range(const json& cfg, const ArrayConfig& a) {
  const json* v = find_key(cfg, "channel", "r_range_m");
  if (!v || (v->is_string() && v->get<std::string>() == "auto")) {
    double d_ray = rayleigh_distance(a);
    return {0.1 * d_ray, 0.8 * d_ray};
  }
  if (!v->is_array() || v->size() != 2)
    throw std::invalid_argument("config: channel.r_range_m must be \"auto\" or [min,max]");
  return {v->at(0).get<double>(), v->at(1).get<double>()};
}

inline ChannelConfig channel_from(const json& cfg, const ArrayConfig& a) {
  ChannelConfig c;
  c.array = a;
  c.paths = require_key<int>(cfg, "channel", "paths");
  c.far_paths = require_key<int>(cfg, "channel", "far_paths");
  c.gain_variance = key_or<double>(cfg, "channel", "gain_variance", 1.0);
  auto [lo, hi] = resolve_r_range(cfg, a);
  c.r_min_m = lo;
  c.r_max_m = hi;
  c.seed = seed_from(cfg);
  c.validate();
  return c;
}

inline SnrPolicy policy_from(const json& cfg) {
  double p = key_or<double>(cfg, "signal", "pilot_power", 1.0);
  bool noiseless = key_or<bool>(cfg, "signal", "noiseless", false);
  const json* fixed = find_key(cfg, "signal", "snr_db");
  const json* range = find_key(cfg, "signal", "snr_range_db");
  int set = (noiseless ? 1 : 0) + (fixed ? 1 : 0) + (range ? 1 : 0);
  if (set == 0)
    throw std::invalid_argument(
        "config: missing required key \"signal.snr_db\" (or snr_range_db / noiseless)");
  if (set > 1)
    throw std::invalid_argument(
        "config: signal.snr_db, signal.snr_range_db and signal.noiseless are exclusive");
  if (noiseless) return SnrPolicy::noiseless(p);
  if (fixed) return SnrPolicy::fixed(fixed->get<double>(), p);
  if (!range->is_array() || range->size() != 2)
    throw std::invalid_argument("config: signal.snr_range_db must be [lo, hi]");
  return SnrPolicy::uniform(range->at(0).get<double>(), range->at(1).get<double>(), p);
}

inline TrainConfig train_from(const json& cfg) {
  TrainConfig t;
  t.n_train = require_key<int>(cfg, "train", "n_train");
  t.n_val = require_key<int>(cfg, "train", "n_val");
  t.batch_size = key_or<int>(cfg, "train", "batch_size", 128);
  t.n_epochs = require_key<int>(cfg, "train", "epochs");
  t.learning_rate = key_or<double>(cfg, "train", "learning_rate", 1e-3);
  t.seed = seed_from(cfg);
  t.augment = key_or<bool>(cfg, "train", "augment", true);
  if (t.augment) t.policy = policy_from(cfg);
  t.validate();
  return t;
}

inline std::string model_type_from(const json& cfg) {
  std::string type = require_key<std::string>(cfg, "model", "type");
  if (type != "matcenet" && type != "xlcnet")
    throw std::invalid_argument("config: model.type must be matcenet or xlcnet");
  return type;
}

inline MatCenetConfig matcenet_from(const json& cfg, int m) {
  MatCenetConfig c;
  c.m = m;
  c.feature_maps = require_key<int>(cfg, "model", "feature_maps");
  c.heads = key_or<int>(cfg, "model", "heads", 4);
  c.ffn_hidden = key_or<int>(cfg, "model", "ffn_hidden", 0);
  c.validate();
  return c;
}

inline XlcnetConfig xlcnet_from(const json& cfg, int m) {
  XlcnetConfig c;
  c.m = m;
  c.feature_maps = require_key<int>(cfg, "model", "feature_maps");
  c.validate();
  return c;
}

inline ExperimentConfig experiment_from(const json& cfg) {
  ExperimentConfig e;
  e.array = array_from(cfg);
  e.scenario = scenario_from_name(require_key<std::string>(cfg, "experiment", "scenario"));
  e.paths = require_key<int>(cfg, "channel", "paths");
  e.far_paths = key_or<int>(cfg, "channel", "far_paths", 1);
  e.snr_grid_db = key_or<std::vector<double>>(
      cfg, "experiment", "snr_grid_db", {-10, -5, 0, 5, 10, 15, 20});
  e.l0_values = key_or<std::vector<int>>(cfg, "experiment", "l0_values", {});
  e.sweep_snr_db = key_or<double>(cfg, "experiment", "sweep_snr_db", 10.0);
  e.n_test = require_key<int>(cfg, "experiment", "n_test");
  e.cov_samples = key_or<int>(cfg, "experiment", "cov_samples", 2000);
  e.estimators = require_key<std::vector<std::string>>(cfg, "experiment", "estimators");
  e.omp_angles = key_or<int>(cfg, "experiment", "omp_angles", 0);
  e.omp_rings = key_or<int>(cfg, "experiment", "omp_rings", 7);
  auto [lo, hi] = resolve_r_range(cfg, e.array);
  e.r_min_m = lo;
  e.r_max_m = hi;
  e.seed = seed_from(cfg);
  e.config_hash = config_hash(cfg);
  e.validate();
  return e;
}

}  // namespace xlce
