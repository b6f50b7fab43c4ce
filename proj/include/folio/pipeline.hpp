#pragma once

#include <string>
#include <vector>

#include "folio/backtest.hpp"
#include "folio/config.hpp"
#include "folio/dataset.hpp"
#include "folio/market_data.hpp"
#include "folio/model.hpp"
#include "folio/risk_control.hpp"
#include "folio/train.hpp"

namespace folio {

inline MarketPanel load_market(const RunConfig& c) {
  if (c.panel) return load_panel(*c.panel);
  if (c.csv) return load_ohlcv(*c.csv);
  throw ConfigError("config needs 'panel' or 'csv'");
}

inline const SplitSpec& require_split(const RunConfig& c) {
  if (!c.split) throw ConfigError("config needs a 'split' section");
  return *c.split;
}

struct TrainingRun {
  Checkpoint checkpoint;
  TrainResult result;
  std::size_t train_dates = 0, validation_dates = 0;
};

/// Fits normalization on the training period and trains the model.
inline TrainingRun run_training(const RunConfig& c, const MarketPanel& panel) {
  const PanelSplit sp = split(panel, require_split(c), c.window);
  const std::size_t fit_end = sp.validation_offset.value_or(sp.train.num_dates());
  const Dataset ds = prepare_dataset(sp.train, c.window, c.ridge, std::nullopt, fit_end);
  std::vector<std::size_t> tr, va;
  for (std::size_t t : ds.decision_dates) (t + 1 < fit_end ? tr : va).push_back(t);
  if (!sp.validation_offset) va.clear();
  TrainingRun run;
  run.train_dates = tr.size();
  run.validation_dates = va.size();
  run.result = train(ds, tr, va, c.train);
  run.checkpoint.model = c.train.model;
  run.checkpoint.window = c.window;
  run.checkpoint.assets = ds.assets;
  run.checkpoint.norm = ds.norm;
  run.checkpoint.params = run.result.params;
  return run;
}

/// Test-period dataset: decision dates run from test_start to the day before test_end.
inline Dataset test_dataset(const RunConfig& c, const MarketPanel& panel, const std::optional<NormStats>& norm) {
  const PanelSplit sp = split(panel, require_split(c), c.window);
  Dataset ds = prepare_dataset(sp.test, c.window, c.ridge, norm, std::nullopt, sp.test_context);
  if (ds.decision_dates.empty()) throw DataError("test period has no decision dates");
  if (ds.decision_dates.front() != sp.test_context)
    throw DataError("not enough history before test_start for window " + std::to_string(c.window));
  return ds;
}

inline void check_assets(const Checkpoint& ck, const Dataset& ds) {
  if (ck.assets != ds.assets) throw DataError("checkpoint assets do not match the panel");
  if (ck.window != ds.window) throw ConfigError("checkpoint window differs from config window");
}

/// Model outputs on the test period.
inline Prediction model_test_prediction(const RunConfig& c, const MarketPanel& panel, const Checkpoint& ck,
                                        Dataset* out_ds = nullptr) {
  Dataset ds = test_dataset(c, panel, ck.norm);
  check_assets(ck, ds);
  Prediction p = predict(ck.params, ck.model, ds, ds.decision_dates);
  if (out_ds) *out_ds = std::move(ds);
  return p;
}

inline std::vector<Eigen::VectorXd> min_variance_series(const Dataset& ds, const std::vector<std::size_t>& dates) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t t : dates) out.push_back(min_variance(ds.cov.at(t)).weights);
  return out;
}

/// `date,sigma_g,gamma,achieved_risk,clamped,<assets>` for one target.
inline std::string risk_csv(const Dataset& ds, const std::vector<std::size_t>& dates,
                            const std::vector<RiskAdjustment>& adj) {
  std::string s = "date,sigma_g,gamma,achieved_risk,clamped";
  for (const auto& a : ds.assets) s += ',' + csv::quote(a);
  s += '\n';
  for (std::size_t k = 0; k < dates.size(); ++k) {
    const RiskAdjustment& r = adj[k];
    s += csv::quote(ds.calendar[dates[k]]) + ',' + csv::number(r.target) + ',' + csv::number(r.gamma) + ',' +
         csv::number(r.achieved_risk) + ',' + (r.clamped ? "1" : "0");
    for (Eigen::Index i = 0; i < r.weights.size(); ++i) s += ',' + csv::number(r.weights(i));
    s += '\n';
  }
  return s;
}

}  // namespace folio
