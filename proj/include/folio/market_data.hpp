#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "folio/csv.hpp"
#include "folio/error.hpp"

namespace folio {

/// Longest indicator lookback (SMA-60). Rows before index kLookbackMax - 1 are warm-up.
inline constexpr std::size_t kLookbackMax = 60;

inline constexpr const char* kPanelFormat = "folio-panel/1";

/// Aligned OHLCV data, one row per asset and one column per trading date.
struct MarketPanel {
  std::vector<std::string> calendar;  // ISO-8601, strictly increasing
  std::vector<std::string> assets;
  Eigen::MatrixXd open, high, low, close, volume;  // N x T

  std::size_t num_assets() const { return assets.size(); }
  std::size_t num_dates() const { return calendar.size(); }

  /// Columns [first, last).
  MarketPanel slice(std::size_t first, std::size_t last) const {
    MarketPanel out;
    const auto n = static_cast<Eigen::Index>(last - first);
    const auto f = static_cast<Eigen::Index>(first);
    out.calendar.assign(calendar.begin() + first, calendar.begin() + last);
    out.assets = assets;
    out.open = open.middleCols(f, n);
    out.high = high.middleCols(f, n);
    out.low = low.middleCols(f, n);
    out.close = close.middleCols(f, n);
    out.volume = volume.middleCols(f, n);
    return out;
  }

  std::optional<std::size_t> index_of(const std::string& date) const {
    auto it = std::lower_bound(calendar.begin(), calendar.end(), date);
    if (it == calendar.end() || *it != date) return std::nullopt;
    return static_cast<std::size_t>(it - calendar.begin());
  }

  bool operator==(const MarketPanel& o) const {
    return calendar == o.calendar && assets == o.assets && open == o.open && high == o.high &&
           low == o.low && close == o.close && volume == o.volume;
  }
};

/// Simple close-to-close returns: r(i, t) = close(i, t + 1) / close(i, t) - 1. N x (T - 1).
struct ReturnMatrix {
  Eigen::MatrixXd r;

  std::size_t num_assets() const { return static_cast<std::size_t>(r.rows()); }
  std::size_t num_periods() const { return static_cast<std::size_t>(r.cols()); }
};

struct SplitSpec {
  std::string train_start, train_end;
  std::string test_start, test_end;
  /// When set, training dates from here through train_end are held out for model selection.
  std::optional<std::string> validation_start;
};

struct PanelSplit {
  MarketPanel train;
  MarketPanel test;
  /// Leading context rows of `test` dated before test_start.
  std::size_t test_context = 0;
  /// Index in `train` of validation_start, if any.
  std::optional<std::size_t> validation_offset;
};

struct OhlcvSchema {
  std::string date = "date", symbol = "symbol", open = "open", high = "high", low = "low",
              close = "close", volume = "volume";
};

struct LoadStats {
  std::size_t rows = 0;
  std::size_t dropped_dates = 0;
};

inline bool is_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (s[i] < '0' || s[i] > '9') return false;
  using namespace std::chrono;
  const year_month_day ymd{year{std::stoi(s.substr(0, 4))},
                           month{static_cast<unsigned>(std::stoi(s.substr(5, 2)))},
                           day{static_cast<unsigned>(std::stoi(s.substr(8, 2)))}};
  return ymd.ok();
}

inline void validate(const MarketPanel& p) {
  const auto n = static_cast<Eigen::Index>(p.num_assets());
  const auto t = static_cast<Eigen::Index>(p.num_dates());
  for (const auto* m : {&p.open, &p.high, &p.low, &p.close, &p.volume})
    if (m->rows() != n || m->cols() != t) throw DataError("panel matrices do not share shape N x T");
  for (std::size_t i = 1; i < p.calendar.size(); ++i)
    if (!(p.calendar[i - 1] < p.calendar[i])) throw DataError("panel calendar not strictly increasing");
  for (const auto* m : {&p.open, &p.high, &p.low, &p.close})
    if (!(m->array() > 0.0).all() || !m->allFinite()) throw DataError("panel contains non-positive or non-finite prices");
}

namespace detail {

inline double parse_number(const std::string& s, std::size_t line, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw DataError("line " + std::to_string(line) + ": malformed " + what + " '" + s + "'");
  return v;
}

}  // namespace detail

/// Reads `date,symbol,open,high,low,close,volume` rows and aligns them on the dates
/// every asset shares. Assets come out sorted by symbol, dates ascending.
inline MarketPanel load_ohlcv(const std::string& path, const OhlcvSchema& schema = {},
                              std::size_t min_observations = 22, LoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  std::string line;
  std::vector<std::string> fields;
  if (!std::getline(in, line) || !csv::split_record(line, fields)) throw DataError(path + ": missing header");
  auto column = [&](const std::string& name) {
    auto it = std::find(fields.begin(), fields.end(), name);
    if (it == fields.end()) throw DataError(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - fields.begin());
  };
  const std::size_t c_date = column(schema.date), c_sym = column(schema.symbol), c_open = column(schema.open),
                    c_high = column(schema.high), c_low = column(schema.low), c_close = column(schema.close),
                    c_vol = column(schema.volume);
  const std::size_t width = fields.size();

  struct Bar {
    double o, h, l, c, v;
  };
  std::map<std::string, std::map<std::string, Bar>> by_symbol;
  std::size_t line_no = 1, rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    if (!csv::split_record(line, fields) || fields.size() != width)
      throw DataError("line " + std::to_string(line_no) + ": malformed row");
    const std::string& date = fields[c_date];
    if (!is_iso_date(date)) throw DataError("line " + std::to_string(line_no) + ": bad date '" + date + "'");
    const std::string& sym = fields[c_sym];
    if (sym.empty()) throw DataError("line " + std::to_string(line_no) + ": empty symbol");
    Bar b{detail::parse_number(fields[c_open], line_no, "open"), detail::parse_number(fields[c_high], line_no, "high"),
          detail::parse_number(fields[c_low], line_no, "low"), detail::parse_number(fields[c_close], line_no, "close"),
          detail::parse_number(fields[c_vol], line_no, "volume")};
    if (b.o <= 0 || b.h <= 0 || b.l <= 0 || b.c <= 0)
      throw DataError("line " + std::to_string(line_no) + ": non-positive price for " + sym + " on " + date);
    if (b.v < 0) throw DataError("line " + std::to_string(line_no) + ": negative volume for " + sym + " on " + date);
    if (!by_symbol[sym].emplace(date, b).second)
      throw DataError("line " + std::to_string(line_no) + ": duplicate row for " + sym + " on " + date);
    ++rows;
  }
  if (by_symbol.empty()) throw DataError(path + ": no data rows");

  std::string rejected;
  for (const auto& [sym, bars] : by_symbol)
    if (bars.size() < min_observations) rejected += (rejected.empty() ? "" : " ") + sym;
  if (!rejected.empty())
    throw DataError("assets with fewer than " + std::to_string(min_observations) + " observations: " + rejected);

  std::set<std::string> all_dates;
  for (const auto& [sym, bars] : by_symbol)
    for (const auto& [d, b] : bars) all_dates.insert(d);

  MarketPanel p;
  for (const auto& [sym, bars] : by_symbol) p.assets.push_back(sym);
  for (const auto& d : all_dates) {
    bool everywhere = true;
    for (const auto& [sym, bars] : by_symbol) everywhere = everywhere && bars.count(d);
    if (everywhere) p.calendar.push_back(d);
  }
  if (p.calendar.empty()) throw DataError(path + ": assets share no common dates");

  const auto n = static_cast<Eigen::Index>(p.assets.size());
  const auto t = static_cast<Eigen::Index>(p.calendar.size());
  for (auto* m : {&p.open, &p.high, &p.low, &p.close, &p.volume}) m->resize(n, t);
  Eigen::Index i = 0;
  for (const auto& [sym, bars] : by_symbol) {
    for (Eigen::Index j = 0; j < t; ++j) {
      const Bar& b = bars.at(p.calendar[static_cast<std::size_t>(j)]);
      p.open(i, j) = b.o;
      p.high(i, j) = b.h;
      p.low(i, j) = b.l;
      p.close(i, j) = b.c;
      p.volume(i, j) = b.v;
    }
    ++i;
  }
  if (stats) *stats = {rows, all_dates.size() - p.calendar.size()};
  return p;
}

/// Panel cache: JSON, each field stored time-major (one array of N values per date).
inline nlohmann::json panel_to_json(const MarketPanel& p) {
  nlohmann::json j;
  j["format"] = kPanelFormat;
  j["calendar"] = p.calendar;
  j["assets"] = p.assets;
  auto cols = [](const Eigen::MatrixXd& m) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index t = 0; t < m.cols(); ++t) {
      std::vector<double> c(m.col(t).data(), m.col(t).data() + m.rows());
      a.push_back(c);
    }
    return a;
  };
  j["open"] = cols(p.open);
  j["high"] = cols(p.high);
  j["low"] = cols(p.low);
  j["close"] = cols(p.close);
  j["volume"] = cols(p.volume);
  return j;
}

inline MarketPanel panel_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kPanelFormat)
    throw DataError(std::string("panel file is not tagged ") + kPanelFormat);
  try {
    MarketPanel p;
    p.calendar = j.at("calendar").get<std::vector<std::string>>();
    p.assets = j.at("assets").get<std::vector<std::string>>();
    const auto n = static_cast<Eigen::Index>(p.assets.size());
    const auto t = static_cast<Eigen::Index>(p.calendar.size());
    auto read = [&](const char* key, Eigen::MatrixXd& m) {
      const auto& a = j.at(key);
      if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != t) throw DataError(std::string("panel field ") + key + " has wrong length");
      m.resize(n, t);
      for (Eigen::Index c = 0; c < t; ++c) {
        const auto col = a[static_cast<std::size_t>(c)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(col.size()) != n) throw DataError(std::string("panel field ") + key + " has wrong width");
        for (Eigen::Index r = 0; r < n; ++r) m(r, c) = col[static_cast<std::size_t>(r)];
      }
    };
    read("open", p.open);
    read("high", p.high);
    read("low", p.low);
    read("close", p.close);
    read("volume", p.volume);
    validate(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed panel file: ") + e.what());
  }
}

inline void save_panel(const MarketPanel& p, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << panel_to_json(p).dump() << '\n';
  if (!out) throw DataError("write failed: " + path);
}

inline MarketPanel load_panel(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return panel_from_json(j);
}

inline ReturnMatrix compute_returns(const MarketPanel& p) {
  if (p.num_dates() < 2) throw DataError("need at least two dates to compute returns");
  const auto t = p.close.cols();
  ReturnMatrix out;
  out.r = (p.close.rightCols(t - 1).array() / p.close.leftCols(t - 1).array() - 1.0).matrix();
  return out;
}

/// Splits a panel into train and test parts. The test panel is prefixed with up to
/// `window + kLookbackMax` earlier rows so every test-date feature and covariance can be
/// computed from data dated on or before it.
inline PanelSplit split(const MarketPanel& p, const SplitSpec& spec, std::size_t window) {
  auto at = [&](const std::string& d, const char* what) {
    auto idx = p.index_of(d);
    if (!idx) throw DataError(std::string(what) + " date " + d + " is not on the calendar");
    return *idx;
  };
  const std::size_t tr0 = at(spec.train_start, "train_start"), tr1 = at(spec.train_end, "train_end");
  const std::size_t te0 = at(spec.test_start, "test_start"), te1 = at(spec.test_end, "test_end");
  if (tr1 < tr0) throw DataError("empty training split");
  if (te1 < te0) throw DataError("empty test split");
  if (te0 < tr1) throw DataError("test_start precedes train_end");

  PanelSplit out;
  out.train = p.slice(tr0, tr1 + 1);
  if (spec.validation_start) {
    const std::size_t v = at(*spec.validation_start, "validation_start");
    if (v <= tr0 || v > tr1) throw DataError("validation_start must fall inside the training period");
    out.validation_offset = v - tr0;
  }
  const std::size_t context = std::min(te0, window + kLookbackMax);
  out.test = p.slice(te0 - context, te1 + 1);
  out.test_context = context;
  return out;
}

}  // namespace folio
