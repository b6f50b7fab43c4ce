#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "folio/dataset.hpp"
#include "folio/model.hpp"
#include "folio/objectives.hpp"
#include "folio/optim.hpp"

namespace folio {

/// Downside threshold: a constant, or the per-period return of one asset in the panel.
struct DeltaSpec {
  double constant = 0.005;
  std::optional<std::string> benchmark;

  static DeltaSpec parse(const std::string& s) {
    DeltaSpec d;
    const std::string prefix = "benchmark:";
    if (s.rfind(prefix, 0) == 0) {
      d.benchmark = s.substr(prefix.size());
      if (d.benchmark->empty()) throw ConfigError("delta benchmark symbol is empty");
      return d;
    }
    char* end = nullptr;
    d.constant = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(d.constant))
      throw ConfigError("delta must be a number or benchmark:<symbol>, got '" + s + "'");
    return d;
  }
  std::string str() const {
    if (benchmark) return "benchmark:" + *benchmark;
    return csv::number(constant);
  }
};

struct TrainConfig {
  Objective objective = Objective::kMaxSharpe;
  bool auxiliary = true;  // add prediction + ranking losses with adaptive weights
  DeltaSpec delta;
  double cost = 0.0;
  double lr = 1e-4;
  double weight_decay = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_length = 64;
  std::uint64_t seed = 0;
  ModelConfig model;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  double loss_total = 0, loss_obj = 0, loss_pred = 0, loss_rank = 0;
  double s_m = 0, s_p = 0, s_r = 0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ad::ParamStore params;  // model parameters plus loss.s_m / loss.s_p / loss.s_r
  std::vector<TrainLogRow> log;
  std::size_t selected_epoch = 0;
  bool diverged = false;
  std::string message;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> contiguous_chunks(const std::vector<std::size_t>& dates, std::size_t len) {
  std::vector<std::vector<std::size_t>> out;
  if (len < 2) throw ConfigError("batch_length must be at least 2");
  for (std::size_t i = 0; i < dates.size(); i += len)
    out.emplace_back(dates.begin() + static_cast<std::ptrdiff_t>(i),
                     dates.begin() + static_cast<std::ptrdiff_t>(std::min(dates.size(), i + len)));
  // A one-date tail cannot carry a Sharpe ratio; fold it into the previous chunk.
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

inline std::optional<std::size_t> benchmark_index(const Dataset& ds, const DeltaSpec& d) {
  if (!d.benchmark) return std::nullopt;
  for (std::size_t i = 0; i < ds.assets.size(); ++i)
    if (ds.assets[i] == *d.benchmark) return i;
  throw ConfigError("delta benchmark " + *d.benchmark + " is not an asset of the panel");
}

inline ad::Tensor delta_tensor(const Dataset& ds, const DeltaSpec& d, const std::vector<std::size_t>& dates) {
  const auto bench = benchmark_index(ds, d);
  if (!bench) return ad::Tensor::scalar(d.constant);
  ad::Tensor t(dates.size(), 1);
  for (std::size_t k = 0; k < dates.size(); ++k)
    t[k] = ds.returns.r(static_cast<Eigen::Index>(*bench), static_cast<Eigen::Index>(dates[k]));
  return t;
}

}  // namespace detail

/// Chosen objective for realized portfolio returns (higher is better).
inline double objective_value(Objective obj, const std::vector<double>& rp, const std::vector<double>& delta) {
  if (rp.empty()) return std::numeric_limits<double>::quiet_NaN();
  switch (obj) {
    case Objective::kMaxCum: return maxcum_value(rp);
    case Objective::kMaxSharpe: {
      if (rp.size() < 2) return std::numeric_limits<double>::quiet_NaN();
      double m = 0;
      for (double r : rp) m += r;
      m /= static_cast<double>(rp.size());
      double v = 0;
      for (double r : rp) v += (r - m) * (r - m);
      return m / std::sqrt(v / static_cast<double>(rp.size() - 1) + ad::kStdEpsilon);
    }
    case Objective::kMinDown: {
      double s = 0;
      for (std::size_t t = 0; t < rp.size(); ++t) {
        const double d = delta.size() == 1 ? delta[0] : delta[t];
        s += std::max(d - rp[t], 0.0);
      }
      return -s;
    }
  }
  return 0.0;
}

/// Realized portfolio returns of model weights; the first date pays no turnover.
inline std::vector<double> realized_returns(const Dataset& ds, const Prediction& pred, double cost) {
  std::vector<double> rp;
  for (std::size_t k = 0; k < pred.dates.size(); ++k) {
    const Eigen::VectorXd r = ds.returns.r.col(static_cast<Eigen::Index>(pred.dates[k]));
    rp.push_back(portfolio_return(pred.weights[k], r, k ? pred.weights[k - 1] : pred.weights[k], cost));
  }
  return rp;
}

/// Trains on `train_dates` in contiguous batches (no shuffling). With validation dates,
/// the epoch with the best validation objective is returned.
inline TrainResult train(const Dataset& ds, const std::vector<std::size_t>& train_dates,
                         const std::vector<std::size_t>& val_dates, const TrainConfig& cfg) {
  if (train_dates.size() < 2) throw DataError("training period has fewer than two decision dates");
  if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
  if (cfg.cost < 0.0) throw ConfigError("transaction cost must be non-negative");
  if (!std::isfinite(cfg.delta.constant)) throw ConfigError("delta must be finite");

  ad::ParamStore params = init_model_params(cfg.model.hidden, cfg.seed);
  params.add("loss.s_m", ad::Tensor::scalar(0.0), false);
  params.add("loss.s_p", ad::Tensor::scalar(0.0), false);
  params.add("loss.s_r", ad::Tensor::scalar(0.0), false);
  ad::AdamW opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay});

  const std::size_t n = ds.num_assets();
  const auto chunks = detail::contiguous_chunks(train_dates, cfg.batch_length);
  std::vector<ModelBatch> batches;
  std::vector<ad::Tensor> deltas;
  for (const auto& c : chunks) {
    batches.push_back(make_batch(ds, c, cfg.model.mixing));
    deltas.push_back(detail::delta_tensor(ds, cfg.delta, c));
  }
  std::vector<double> val_delta;
  if (!val_dates.empty()) val_delta = detail::delta_tensor(ds, cfg.delta, val_dates).values();

  TrainResult result;
  result.params = params;
  double best_val = -std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const ad::ParamStore last_good = params;
    TrainLogRow row;
    row.epoch = epoch;
    try {
      for (std::size_t b = 0; b < batches.size(); ++b) {
        ad::Tape tape;
        const BoundParams bound = bind(tape, params, true);
        const ModelOutput out = forward(tape, bound, batches[b]);
        const ad::Var rp = portfolio_returns(tape, out.weights, batches[b].realized, n, cfg.cost);
        ad::Var obj;
        switch (cfg.objective) {
          case Objective::kMaxCum: obj = loss_maxcum(rp); break;
          case Objective::kMaxSharpe: obj = loss_maxsharpe(rp); break;
          case Objective::kMinDown: obj = loss_mindown(rp, tape.constant(deltas[b])); break;
        }
        ad::Var total;
        double pred_v = 0, rank_v = 0;
        if (cfg.auxiliary) {
          const ad::Var pred = loss_prediction(tape, out.predicted, batches[b].realized, n);
          const ad::Var rank = loss_ranking(tape, out.predicted, batches[b].realized, n);
          total = combined_loss(obj, pred, rank, {bound["loss.s_m"], bound["loss.s_p"], bound["loss.s_r"]});
          pred_v = pred.item();
          rank_v = rank.item();
        } else {
          total = ad::neg(obj);
        }
        tape.backward(total);
        std::vector<ad::Tensor> grads;
        for (const ad::Var& v : bound.vars) grads.push_back(tape.grad(v));
        opt.step(params, grads);
        for (const auto& e : params.entries())
          if (!e.value.all_finite()) throw NumericalError("parameter " + e.name + " became non-finite");
        const double k = static_cast<double>(batches.size());
        row.loss_total += total.item() / k;
        row.loss_obj += obj.item() / k;
        row.loss_pred += pred_v / k;
        row.loss_rank += rank_v / k;
      }
      if (!val_dates.empty()) {
        const Prediction vp = predict(params, cfg.model, ds, val_dates);
        row.val_metric = objective_value(cfg.objective, realized_returns(ds, vp, cfg.cost), val_delta);
      }
    } catch (const NumericalError& e) {
      params = last_good;
      result.diverged = true;
      result.message = "diverged in epoch " + std::to_string(epoch) + ": " + e.what();
      if (val_dates.empty()) {
        result.params = params;
        result.selected_epoch = epoch - 1;
      }
      break;
    }
    row.s_m = params.at("loss.s_m").item();
    row.s_p = params.at("loss.s_p").item();
    row.s_r = params.at("loss.s_r").item();
    result.log.push_back(row);
    if (val_dates.empty()) {
      result.params = params;
      result.selected_epoch = epoch;
    } else if (std::isfinite(row.val_metric) && row.val_metric > best_val) {
      best_val = row.val_metric;
      result.params = params;
      result.selected_epoch = epoch;
    }
  }
  return result;
}

inline void write_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,loss_total,loss_obj,loss_pred,loss_rank,s_m,s_p,s_r,val_metric\n";
  for (const auto& r : log)
    out << r.epoch << ',' << csv::number(r.loss_total) << ',' << csv::number(r.loss_obj) << ','
        << csv::number(r.loss_pred) << ',' << csv::number(r.loss_rank) << ',' << csv::number(r.s_m) << ','
        << csv::number(r.s_p) << ',' << csv::number(r.s_r) << ','
        << (std::isfinite(r.val_metric) ? csv::number(r.val_metric) : std::string()) << '\n';
  if (!out) throw DataError("write failed: " + path);
}

inline constexpr const char* kCheckpointFormat = "folio-checkpoint/1";

/// Trained parameters together with what is needed to rebuild model inputs.
struct Checkpoint {
  ModelConfig model;
  std::size_t window = 20;
  std::vector<std::string> assets;
  NormStats norm;
  ad::ParamStore params;
};

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["model"] = {{"hidden", c.model.hidden}, {"mixing", to_string(c.model.mixing)}, {"window", c.window}};
  j["assets"] = c.assets;
  j["norm"] = {{"mean", c.norm.mean}, {"std", c.norm.std}};
  j["params"] = ad::params_to_json(c.params);
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
    throw DataError(std::string("checkpoint is not tagged ") + kCheckpointFormat);
  try {
    Checkpoint c;
    c.model.hidden = j.at("model").at("hidden").get<std::size_t>();
    c.model.mixing = mixing_from_string(j.at("model").at("mixing").get<std::string>());
    c.window = j.at("model").at("window").get<std::size_t>();
    c.assets = j.at("assets").get<std::vector<std::string>>();
    c.norm.mean = j.at("norm").at("mean").get<std::array<double, kNumFeatures>>();
    c.norm.std = j.at("norm").at("std").get<std::array<double, kNumFeatures>>();
    c.params = ad::params_from_json(j.at("params"));
    if (hidden_size(c.params) != c.model.hidden) throw DataError("checkpoint hidden size mismatch");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << checkpoint_to_json(c).dump() << '\n';
  if (!out) throw DataError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace folio
