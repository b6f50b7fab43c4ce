#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "folio/error.hpp"
#include "folio/market_data.hpp"
#include "folio/risk_control.hpp"
#include "folio/train.hpp"

namespace folio {

inline constexpr const char* kVersion = "0.1.0";

/// Everything a command needs, read from one JSON document.
struct RunConfig {
  std::optional<std::string> panel;  // file written by `ingest`
  std::optional<std::string> csv;    // raw long-format OHLCV
  std::optional<SplitSpec> split;
  std::size_t window = 20;
  double ridge = kDefaultRidge;
  double periods_per_year = 252;
  TrainConfig train;
  std::vector<double> sigma_g;
  ImproveOptions improve{.return_weight = 1.0};
  std::string output_dir = "runs";
  std::optional<std::string> checkpoint;
};

namespace detail {

template <class T>
T config_get(const nlohmann::json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
}

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) throw ConfigError(std::string("config key '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::config_get;
  detail::reject_unknown(j,
                         {"panel", "csv", "split", "window", "ridge", "periods_per_year", "hidden", "mixing",
                          "objective", "auxiliary", "delta", "cost", "lr", "weight_decay", "epochs", "batch_length",
                          "seed", "sigma_g", "improve", "output_dir", "checkpoint"},
                         "");
  RunConfig c;
  c.panel = detail::optional_string(j, "panel");
  c.csv = detail::optional_string(j, "csv");
  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::reject_unknown(s, {"train_start", "train_end", "validation_start", "test_start", "test_end"}, "split");
    SplitSpec sp;
    for (auto [key, dst] : {std::pair{"train_start", &sp.train_start}, std::pair{"train_end", &sp.train_end},
                            std::pair{"test_start", &sp.test_start}, std::pair{"test_end", &sp.test_end}}) {
      const auto v = detail::optional_string(s, key);
      if (!v) throw ConfigError(std::string("split.") + key + " is required");
      if (!is_iso_date(*v)) throw ConfigError(std::string("split.") + key + " is not a YYYY-MM-DD date");
      *dst = *v;
    }
    sp.validation_start = detail::optional_string(s, "validation_start");
    if (sp.validation_start && !is_iso_date(*sp.validation_start))
      throw ConfigError("split.validation_start is not a YYYY-MM-DD date");
    c.split = sp;
  }
  c.window = config_get<std::size_t>(j, "window", c.window);
  c.ridge = config_get<double>(j, "ridge", c.ridge);
  c.periods_per_year = config_get<double>(j, "periods_per_year", c.periods_per_year);
  c.train.model.hidden = config_get<std::size_t>(j, "hidden", c.train.model.hidden);
  c.train.model.mixing = mixing_from_string(config_get<std::string>(j, "mixing", to_string(c.train.model.mixing)));
  c.train.objective = objective_from_string(config_get<std::string>(j, "objective", to_string(c.train.objective)));
  c.train.auxiliary = config_get<bool>(j, "auxiliary", c.train.auxiliary);
  if (j.contains("delta")) {
    const auto& d = j.at("delta");
    if (d.is_number()) {
      c.train.delta = DeltaSpec{d.get<double>(), std::nullopt};
    } else if (d.is_string()) {
      c.train.delta = DeltaSpec::parse(d.get<std::string>());
    } else {
      throw ConfigError("config key 'delta' must be a number or \"benchmark:<symbol>\"");
    }
  }
  c.train.cost = config_get<double>(j, "cost", c.train.cost);
  c.train.lr = config_get<double>(j, "lr", c.train.lr);
  c.train.weight_decay = config_get<double>(j, "weight_decay", c.train.weight_decay);
  c.train.epochs = config_get<std::size_t>(j, "epochs", c.train.epochs);
  c.train.batch_length = config_get<std::size_t>(j, "batch_length", c.train.batch_length);
  c.train.seed = config_get<std::uint64_t>(j, "seed", c.train.seed);
  c.sigma_g = config_get<std::vector<double>>(j, "sigma_g", c.sigma_g);
  if (j.contains("improve")) {
    const auto& im = j.at("improve");
    detail::reject_unknown(im, {"steps", "lr", "return_weight", "literal_product"}, "improve");
    c.improve.steps = config_get<std::size_t>(im, "steps", c.improve.steps);
    c.improve.lr = config_get<double>(im, "lr", c.improve.lr);
    c.improve.return_weight = config_get<double>(im, "return_weight", c.improve.return_weight);
    c.improve.literal_product = config_get<bool>(im, "literal_product", c.improve.literal_product);
  }
  c.output_dir = config_get<std::string>(j, "output_dir", c.output_dir);
  c.checkpoint = detail::optional_string(j, "checkpoint");
  return c;
}

/// Checks value ranges; called after flags have been applied.
inline void validate(const RunConfig& c) {
  if (c.window < 2 || c.window > 250) throw ConfigError("window must be in [2, 250]");
  if (!(c.ridge >= 0.0) || !std::isfinite(c.ridge)) throw ConfigError("ridge must be finite and non-negative");
  if (!(c.periods_per_year > 0.0) || !std::isfinite(c.periods_per_year))
    throw ConfigError("periods_per_year must be positive");
  if (c.train.model.hidden == 0) throw ConfigError("hidden must be positive");
  if (!(c.train.cost >= 0.0) || !std::isfinite(c.train.cost)) throw ConfigError("cost must be finite and non-negative");
  if (!(c.train.lr > 0.0) || !std::isfinite(c.train.lr)) throw ConfigError("lr must be positive");
  if (!(c.train.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (c.train.epochs == 0) throw ConfigError("epochs must be positive");
  if (c.train.batch_length < 2) throw ConfigError("batch_length must be at least 2");
  for (double s : c.sigma_g)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("sigma_g values must be finite and non-negative");
  if (!(c.improve.lr > 0.0) || !std::isfinite(c.improve.lr)) throw ConfigError("improve.lr must be positive");
  if (!std::isfinite(c.improve.return_weight)) throw ConfigError("improve.return_weight must be finite");
  if (c.panel && c.csv) throw ConfigError("give either 'panel' or 'csv', not both");
}

/// Canonical form with every default filled in.
inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  if (c.panel) j["panel"] = *c.panel;
  if (c.csv) j["csv"] = *c.csv;
  if (c.split) {
    j["split"] = {{"train_start", c.split->train_start},
                  {"train_end", c.split->train_end},
                  {"test_start", c.split->test_start},
                  {"test_end", c.split->test_end}};
    if (c.split->validation_start) j["split"]["validation_start"] = *c.split->validation_start;
  }
  j["window"] = c.window;
  j["ridge"] = c.ridge;
  j["periods_per_year"] = c.periods_per_year;
  j["hidden"] = c.train.model.hidden;
  j["mixing"] = to_string(c.train.model.mixing);
  j["objective"] = to_string(c.train.objective);
  j["auxiliary"] = c.train.auxiliary;
  if (c.train.delta.benchmark) {
    j["delta"] = c.train.delta.str();
  } else {
    j["delta"] = c.train.delta.constant;
  }
  j["cost"] = c.train.cost;
  j["lr"] = c.train.lr;
  j["weight_decay"] = c.train.weight_decay;
  j["epochs"] = c.train.epochs;
  j["batch_length"] = c.train.batch_length;
  j["seed"] = c.train.seed;
  j["sigma_g"] = c.sigma_g;
  j["improve"] = {{"steps", c.improve.steps},
                  {"lr", c.improve.lr},
                  {"return_weight", c.improve.return_weight},
                  {"literal_product", c.improve.literal_product}};
  j["output_dir"] = c.output_dir;
  if (c.checkpoint) j["checkpoint"] = *c.checkpoint;
  return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

/// FNV-1a over the canonical dump, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  const std::string s = run_config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace folio
