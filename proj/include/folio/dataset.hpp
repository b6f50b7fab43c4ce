#pragma once

#include <optional>
#include <string>
#include <vector>

#include "folio/covariance.hpp"
#include "folio/indicators.hpp"
#include "folio/market_data.hpp"

namespace folio {

/// Everything the model needs for one panel, indexed by calendar position.
///
/// A decision date t has a full feature window of non-warm-up rows
/// [t - w + 1, t], a covariance from returns realized by t, and a realized
/// next-period return r[t] to be evaluated on.
struct Dataset {
  std::vector<std::string> calendar;
  std::vector<std::string> assets;
  std::size_t window = 0;
  FeatureTensor raw;       // before normalization
  FeatureTensor features;  // z-scored
  NormStats norm;
  ReturnMatrix returns;
  CovarianceSeries cov;
  std::vector<std::size_t> decision_dates;

  std::size_t num_assets() const { return assets.size(); }
};

/// First calendar index usable as a decision date for window `w`.
inline std::size_t first_decision_index(std::size_t window) {
  return std::max(kWarmupRows + window - 1, window);
}

/// Builds features, returns and covariances. With `norm` unset, statistics are
/// fitted on the non-warm-up rows before `fit_end` (default: all rows).
inline Dataset prepare_dataset(const MarketPanel& panel, std::size_t window, double ridge,
                               const std::optional<NormStats>& norm = std::nullopt,
                               std::optional<std::size_t> fit_end = std::nullopt, std::size_t first_date = 0) {
  if (window < 2) throw ConfigError("window must be at least 2");
  Dataset ds;
  ds.calendar = panel.calendar;
  ds.assets = panel.assets;
  ds.window = window;
  ds.raw = compute_indicators(panel);
  if (norm) {
    ds.norm = *norm;
  } else {
    const std::size_t end = fit_end.value_or(panel.num_dates());
    if (end <= kWarmupRows) throw DataError("no post-warm-up rows to fit normalization on");
    ds.norm = fit_norm(ds.raw, kWarmupRows, end);
  }
  ds.features = apply_norm(ds.raw, ds.norm);
  ds.returns = compute_returns(panel);
  ds.cov = rolling_covariance(ds.returns, window, ridge);
  const std::size_t t0 = std::max(first_decision_index(window), first_date);
  for (std::size_t t = t0; t + 1 < panel.num_dates(); ++t) ds.decision_dates.push_back(t);
  return ds;
}

/// Decision dates of `ds` in calendar range [first, last).
inline std::vector<std::size_t> dates_between(const Dataset& ds, std::size_t first, std::size_t last) {
  std::vector<std::size_t> out;
  for (std::size_t t : ds.decision_dates)
    if (t >= first && t < last) out.push_back(t);
  return out;
}

}  // namespace folio
