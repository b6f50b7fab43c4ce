#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "folio/csv.hpp"
#include "folio/error.hpp"
#include "folio/market_data.hpp"

namespace folio {

inline constexpr std::size_t kNumFeatures = 8;

enum Feature : std::size_t { kMacd = 0, kBollLower, kBollUpper, kRsi, kCci, kDmi, kSma30, kSma60 };

inline constexpr std::array<const char*, kNumFeatures> kFeatureNames = {
    "macd", "boll_lb", "boll_ub", "rsi", "cci", "dmi", "sma30", "sma60"};

/// Rows [0, kWarmupRows) of an indicator series are back-filled.
inline constexpr std::size_t kWarmupRows = kLookbackMax - 1;

/// N x T x 8 indicator values, feature index fastest.
class FeatureTensor {
 public:
  FeatureTensor() = default;
  FeatureTensor(std::size_t assets, std::size_t dates)
      : assets_(assets), dates_(dates), data_(assets * dates * kNumFeatures, 0.0) {}

  std::size_t num_assets() const { return assets_; }
  std::size_t num_dates() const { return dates_; }

  double& operator()(std::size_t asset, std::size_t t, std::size_t k) {
    return data_[(asset * dates_ + t) * kNumFeatures + k];
  }
  double operator()(std::size_t asset, std::size_t t, std::size_t k) const {
    return data_[(asset * dates_ + t) * kNumFeatures + k];
  }
  /// Feature vector of one asset at one date.
  const double* row(std::size_t asset, std::size_t t) const { return &data_[(asset * dates_ + t) * kNumFeatures]; }

  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t assets_ = 0, dates_ = 0;
  std::vector<double> data_;
};

struct NormStats {
  std::array<double, kNumFeatures> mean{};
  std::array<double, kNumFeatures> std{};
  std::array<bool, kNumFeatures> floored{};
};

inline constexpr double kStdFloor = 1e-8;

namespace indicator {

using Series = std::vector<double>;

inline void backfill(Series& s, std::size_t first_valid) {
  for (std::size_t t = 0; t < first_valid && first_valid < s.size(); ++t) s[t] = s[first_valid];
}

/// EMA seeded with the first value, alpha = 2 / (n + 1).
inline Series ema(const Series& x, std::size_t n) {
  Series out(x.size());
  const double a = 2.0 / (static_cast<double>(n) + 1.0);
  out[0] = x[0];
  for (std::size_t t = 1; t < x.size(); ++t) out[t] = out[t - 1] + a * (x[t] - out[t - 1]);
  return out;
}

/// Trailing simple moving average; valid from n - 1.
inline Series sma(const Series& x, std::size_t n) {
  Series out(x.size());
  for (std::size_t t = n - 1; t < x.size(); ++t) {
    double sum = 0.0;
    for (std::size_t s = t + 1 - n; s <= t; ++s) sum += x[s];
    out[t] = sum / static_cast<double>(n);
  }
  backfill(out, n - 1);
  return out;
}

inline Series macd(const Series& close) {
  const Series fast = ema(close, 12), slow = ema(close, 26);
  Series out(close.size());
  for (std::size_t t = 0; t < close.size(); ++t) out[t] = fast[t] - slow[t];
  return out;
}

/// 20-period bands at +/- 2 population standard deviations.
inline std::pair<Series, Series> bollinger(const Series& close, std::size_t n = 20, double width = 2.0) {
  Series lo(close.size()), hi(close.size());
  for (std::size_t t = n - 1; t < close.size(); ++t) {
    double m = 0.0;
    for (std::size_t s = t + 1 - n; s <= t; ++s) m += close[s];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t s = t + 1 - n; s <= t; ++s) v += (close[s] - m) * (close[s] - m);
    const double sd = std::sqrt(v / static_cast<double>(n));
    lo[t] = m - width * sd;
    hi[t] = m + width * sd;
  }
  backfill(lo, n - 1);
  backfill(hi, n - 1);
  return {lo, hi};
}

/// Wilder RSI. Flat windows read 50; windows without losses read 100.
inline Series rsi(const Series& close, std::size_t n = 14) {
  Series out(close.size(), 50.0);
  if (close.size() <= n) return out;
  auto value = [](double gain, double loss) {
    if (loss == 0.0) return gain == 0.0 ? 50.0 : 100.0;
    return 100.0 - 100.0 / (1.0 + gain / loss);
  };
  double gain = 0.0, loss = 0.0;
  for (std::size_t t = 1; t <= n; ++t) {
    const double d = close[t] - close[t - 1];
    gain += d > 0 ? d : 0.0;
    loss += d < 0 ? -d : 0.0;
  }
  gain /= static_cast<double>(n);
  loss /= static_cast<double>(n);
  out[n] = value(gain, loss);
  const double k = static_cast<double>(n);
  for (std::size_t t = n + 1; t < close.size(); ++t) {
    const double d = close[t] - close[t - 1];
    gain = (gain * (k - 1.0) + (d > 0 ? d : 0.0)) / k;
    loss = (loss * (k - 1.0) + (d < 0 ? -d : 0.0)) / k;
    out[t] = value(gain, loss);
  }
  backfill(out, n);
  return out;
}

/// 20-period CCI on the typical price with the 0.015 constant. Zero mean deviation reads 0.
inline Series cci(const Series& high, const Series& low, const Series& close, std::size_t n = 20) {
  Series tp(close.size()), out(close.size(), 0.0);
  for (std::size_t t = 0; t < close.size(); ++t) tp[t] = (high[t] + low[t] + close[t]) / 3.0;
  for (std::size_t t = n - 1; t < close.size(); ++t) {
    double m = 0.0;
    for (std::size_t s = t + 1 - n; s <= t; ++s) m += tp[s];
    m /= static_cast<double>(n);
    double md = 0.0;
    for (std::size_t s = t + 1 - n; s <= t; ++s) md += std::abs(tp[s] - m);
    md /= static_cast<double>(n);
    out[t] = md > 0.0 ? (tp[t] - m) / (0.015 * md) : 0.0;
  }
  backfill(out, n - 1);
  return out;
}

/// ADX with Wilder smoothing; first value at 2n - 1.
inline Series adx(const Series& high, const Series& low, const Series& close, std::size_t n = 14) {
  const std::size_t len = close.size();
  Series out(len, 0.0);
  if (len < 2 * n) return out;
  Series tr(len, 0.0), pdm(len, 0.0), mdm(len, 0.0);
  for (std::size_t t = 1; t < len; ++t) {
    tr[t] = std::max({high[t] - low[t], std::abs(high[t] - close[t - 1]), std::abs(low[t] - close[t - 1])});
    const double up = high[t] - high[t - 1], down = low[t - 1] - low[t];
    pdm[t] = (up > down && up > 0) ? up : 0.0;
    mdm[t] = (down > up && down > 0) ? down : 0.0;
  }
  const double k = static_cast<double>(n);
  double str = 0.0, sp = 0.0, sm = 0.0;
  for (std::size_t t = 1; t <= n; ++t) {
    str += tr[t];
    sp += pdm[t];
    sm += mdm[t];
  }
  auto dx = [](double s_tr, double s_p, double s_m) {
    if (s_tr <= 0.0) return 0.0;
    const double pdi = 100.0 * s_p / s_tr, mdi = 100.0 * s_m / s_tr;
    return pdi + mdi > 0.0 ? 100.0 * std::abs(pdi - mdi) / (pdi + mdi) : 0.0;
  };
  Series dxs(len, 0.0);
  dxs[n] = dx(str, sp, sm);
  for (std::size_t t = n + 1; t < len; ++t) {
    str = str - str / k + tr[t];
    sp = sp - sp / k + pdm[t];
    sm = sm - sm / k + mdm[t];
    dxs[t] = dx(str, sp, sm);
  }
  const std::size_t first = 2 * n - 1;
  double a = 0.0;
  for (std::size_t t = n; t <= first; ++t) a += dxs[t];
  a /= k;
  out[first] = a;
  for (std::size_t t = first + 1; t < len; ++t) {
    a = (a * (k - 1.0) + dxs[t]) / k;
    out[t] = a;
  }
  backfill(out, first);
  return out;
}

}  // namespace indicator

inline FeatureTensor compute_indicators(const MarketPanel& p) {
  const std::size_t n = p.num_assets(), len = p.num_dates();
  if (len < kLookbackMax)
    throw DataError("indicators need at least " + std::to_string(kLookbackMax) + " dates, got " + std::to_string(len));
  FeatureTensor out(n, len);
  auto row = [&](const Eigen::MatrixXd& m, std::size_t i) {
    indicator::Series s(len);
    for (std::size_t t = 0; t < len; ++t) s[t] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
    return s;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = row(p.close, i), h = row(p.high, i), l = row(p.low, i);
    const auto [lo, hi] = indicator::bollinger(c);
    const std::array<indicator::Series, kNumFeatures> cols = {
        indicator::macd(c), lo, hi, indicator::rsi(c), indicator::cci(h, l, c), indicator::adx(h, l, c),
        indicator::sma(c, 30), indicator::sma(c, 60)};
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t k = 0; k < kNumFeatures; ++k) out(i, t, k) = cols[k][t];
  }
  return out;
}

/// Pooled per-feature statistics over all assets and dates [first, last).
inline NormStats fit_norm(const FeatureTensor& f, std::size_t first, std::size_t last) {
  if (last <= first || last > f.num_dates()) throw DataError("empty normalization range");
  NormStats s;
  const double count = static_cast<double>((last - first) * f.num_assets());
  for (std::size_t k = 0; k < kNumFeatures; ++k) {
    // Shift by the first value so a constant column has an exact mean.
    const double shift = f(0, first, k);
    double m = 0.0;
    for (std::size_t i = 0; i < f.num_assets(); ++i)
      for (std::size_t t = first; t < last; ++t) m += f(i, t, k) - shift;
    m /= count;
    double v = 0.0;
    for (std::size_t i = 0; i < f.num_assets(); ++i)
      for (std::size_t t = first; t < last; ++t) {
        const double d = f(i, t, k) - shift - m;
        v += d * d;
      }
    const double sd = std::sqrt(v / count);
    s.mean[k] = shift + m;
    s.floored[k] = !(sd > kStdFloor);
    s.std[k] = s.floored[k] ? kStdFloor : sd;
  }
  return s;
}

inline FeatureTensor apply_norm(const FeatureTensor& f, const NormStats& s) {
  FeatureTensor out(f.num_assets(), f.num_dates());
  for (std::size_t i = 0; i < f.num_assets(); ++i)
    for (std::size_t t = 0; t < f.num_dates(); ++t)
      for (std::size_t k = 0; k < kNumFeatures; ++k) {
        const double v = (f(i, t, k) - s.mean[k]) / s.std[k];
        if (!std::isfinite(v)) throw NumericalError("non-finite normalized feature");
        out(i, t, k) = v;
      }
  return out;
}

/// One row per date and asset: `date,symbol,macd,boll_lb,boll_ub,rsi,cci,dmi,sma30,sma60`.
inline void export_features_csv(const FeatureTensor& f, const MarketPanel& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "date,symbol";
  for (const char* name : kFeatureNames) out << ',' << name;
  out << '\n';
  for (std::size_t t = 0; t < f.num_dates(); ++t)
    for (std::size_t i = 0; i < f.num_assets(); ++i) {
      out << csv::quote(p.calendar[t]) << ',' << csv::quote(p.assets[i]);
      for (std::size_t k = 0; k < kNumFeatures; ++k) out << ',' << csv::number(f(i, t, k));
      out << '\n';
    }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace folio
