#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "folio/csv.hpp"
#include "folio/market_data.hpp"

namespace folio {

/// Geometric random-walk market on a daily calendar.
struct SyntheticSpec {
  std::size_t days = 600;
  std::vector<double> drift = {0.005, 0.0, 0.0, 0.0, 0.0};  // per-period mean return per asset
  double noise = 0.01;                                       // per-period return std
  std::uint64_t seed = 7;
  std::string start = "2020-01-01";
};

inline std::string add_days(const std::string& iso, int days) {
  using namespace std::chrono;
  const year_month_day ymd{year{std::stoi(iso.substr(0, 4))}, month{static_cast<unsigned>(std::stoi(iso.substr(5, 2)))},
                           day{static_cast<unsigned>(std::stoi(iso.substr(8, 2)))}};
  const year_month_day out{sys_days{ymd} + std::chrono::days{days}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(out.year()), static_cast<unsigned>(out.month()),
                static_cast<unsigned>(out.day()));
  return buf;
}

inline MarketPanel synthetic_market(const SyntheticSpec& spec) {
  const std::size_t n = spec.drift.size(), t = spec.days;
  if (n == 0 || t < 2) throw ConfigError("synthetic market needs assets and at least two days");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  MarketPanel p;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "A%02zu", i + 1);
    p.assets.push_back(name);
  }
  for (std::size_t d = 0; d < t; ++d) p.calendar.push_back(add_days(spec.start, static_cast<int>(d)));
  const auto en = static_cast<Eigen::Index>(n), et = static_cast<Eigen::Index>(t);
  for (auto* m : {&p.open, &p.high, &p.low, &p.close, &p.volume}) m->resize(en, et);
  for (Eigen::Index i = 0; i < en; ++i) {
    double c = 100.0;
    for (Eigen::Index d = 0; d < et; ++d) {
      const double o = c;
      if (d > 0) c = std::max(1e-6, c * (1.0 + spec.drift[static_cast<std::size_t>(i)] + spec.noise * z(rng)));
      const double wick_hi = std::abs(z(rng)) * 0.005, wick_lo = std::abs(z(rng)) * 0.005;
      p.open(i, d) = o;
      p.close(i, d) = c;
      p.high(i, d) = std::max(o, c) * (1.0 + wick_hi);
      p.low(i, d) = std::min(o, c) * (1.0 - wick_lo);
      p.volume(i, d) = std::round(1e6 * (1.0 + 0.1 * std::abs(z(rng))));
    }
  }
  return p;
}

/// Long-format CSV with header `date,symbol,open,high,low,close,volume`.
inline void write_ohlcv_csv(const MarketPanel& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "date,symbol,open,high,low,close,volume\n";
  for (std::size_t t = 0; t < p.num_dates(); ++t)
    for (std::size_t i = 0; i < p.num_assets(); ++i) {
      const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(t);
      out << p.calendar[t] << ',' << csv::quote(p.assets[i]) << ',' << csv::number(p.open(r, c)) << ','
          << csv::number(p.high(r, c)) << ',' << csv::number(p.low(r, c)) << ',' << csv::number(p.close(r, c)) << ','
          << csv::number(p.volume(r, c)) << '\n';
    }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace folio
