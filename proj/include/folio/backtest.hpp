#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "folio/covariance.hpp"
#include "folio/csv.hpp"
#include "folio/market_data.hpp"
#include "folio/objectives.hpp"
#include "folio/risk_control.hpp"

namespace folio {

/// Weights chosen at the close of each calendar index in `dates`, held over r[date].
struct PortfolioSeries {
  std::vector<std::size_t> dates;
  std::vector<Eigen::VectorXd> weights;
};

struct Metrics {
  double cw = 1.0;    // cumulative wealth
  double apr = 0.0;   // annualized percentage rate
  double avol = 0.0;  // annualized volatility
  double asr = 0.0;   // annualized Sharpe ratio; NaN when volatility is zero
  double mdd = 0.0;   // maximum drawdown, <= 0
  double acr = 0.0;   // annualized Calmar ratio; +inf when mdd == 0
  std::vector<std::string> warnings;
};

struct BacktestReport {
  std::vector<std::string> wealth_dates;  // T + 1 entries
  std::vector<double> wealth;             // starts at 1
  std::vector<double> daily_returns;      // T entries
  PortfolioSeries portfolio;
  std::vector<std::string> assets;
  Metrics metrics;
  nlohmann::json config;
};

inline double max_drawdown(const std::vector<double>& wealth) {
  double peak = -std::numeric_limits<double>::infinity(), mdd = 0.0;
  for (double w : wealth) {
    peak = std::max(peak, w);
    mdd = std::min(mdd, w / peak - 1.0);
  }
  return mdd;
}

inline Metrics compute_metrics(const std::vector<double>& wealth, const std::vector<double>& daily, double periods_per_year) {
  const std::size_t t = daily.size();
  if (t < 2) throw DataError("metrics need at least two periods");
  if (wealth.size() != t + 1) throw DataError("wealth curve must have one more entry than the return series");
  if (!(periods_per_year > 0.0)) throw ConfigError("periods_per_year must be positive");
  Metrics m;
  m.cw = 1.0;
  for (double r : daily) m.cw *= 1.0 + r;
  m.apr = std::pow(m.cw, periods_per_year / static_cast<double>(t)) - 1.0;
  double mean = 0.0;
  for (double r : daily) mean += r;
  mean /= static_cast<double>(t);
  double ss = 0.0;
  for (double r : daily) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / static_cast<double>(t - 1));
  const double ann = std::sqrt(periods_per_year);
  m.avol = sd * ann;
  if (sd > 0.0) {
    m.asr = mean / sd * ann;
  } else {
    m.asr = std::numeric_limits<double>::quiet_NaN();
    m.warnings.push_back("zero volatility: Sharpe ratio undefined");
  }
  m.mdd = max_drawdown(wealth);
  if (m.mdd < 0.0) {
    m.acr = m.apr / std::abs(m.mdd);
  } else {
    m.acr = std::numeric_limits<double>::infinity();
    m.warnings.push_back("no drawdown: Calmar ratio unbounded");
  }
  return m;
}

/// Applies each portfolio to the next-period returns, charging turnover against the previous weights.
inline BacktestReport run_backtest(const PortfolioSeries& p, const ReturnMatrix& returns, double cost,
                                   const std::vector<std::string>& calendar, const std::vector<std::string>& assets,
                                   double periods_per_year) {
  if (p.dates.empty() || p.dates.size() != p.weights.size()) throw DataError("portfolio series is empty or ragged");
  if (cost < 0.0) throw ConfigError("transaction cost must be non-negative");
  BacktestReport rep;
  rep.portfolio = p;
  rep.assets = assets;
  rep.wealth.push_back(1.0);
  rep.wealth_dates.push_back(calendar.at(p.dates[0]));
  for (std::size_t k = 0; k < p.dates.size(); ++k) {
    const std::size_t t = p.dates[k];
    if (k && t != p.dates[k - 1] + 1) throw DataError("portfolio series skips calendar index " + std::to_string(p.dates[k - 1] + 1));
    if (t >= returns.num_periods()) throw DataError("no realized return after " + calendar.at(t));
    const Eigen::VectorXd& b = p.weights[k];
    if (static_cast<std::size_t>(b.size()) != returns.num_assets()) throw DataError("weight vector has wrong size");
    const double rp = portfolio_return(b, returns.r.col(static_cast<Eigen::Index>(t)), k ? p.weights[k - 1] : b, cost);
    rep.daily_returns.push_back(rp);
    rep.wealth.push_back(rep.wealth.back() * (1.0 + rp));
    rep.wealth_dates.push_back(calendar.at(t + 1));
  }
  rep.metrics = compute_metrics(rep.wealth, rep.daily_returns, periods_per_year);
  return rep;
}

/// Equal weights, rebalanced every period.
inline PortfolioSeries baseline_market(std::size_t assets, const std::vector<std::size_t>& dates) {
  PortfolioSeries p;
  p.dates = dates;
  p.weights.assign(dates.size(), Eigen::VectorXd::Constant(static_cast<Eigen::Index>(assets), 1.0 / static_cast<double>(assets)));
  return p;
}

/// Minimum-variance portfolio under each date's covariance.
inline PortfolioSeries baseline_mvm(const CovarianceSeries& cov, const std::vector<std::size_t>& dates) {
  PortfolioSeries p;
  p.dates = dates;
  for (std::size_t t : dates) p.weights.push_back(min_variance(cov.at(t)).weights);
  return p;
}

// ---------------------------------------------------------------------------
// Report files

namespace detail {

inline nlohmann::json metric_json(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  return v;
}

inline double metric_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (s == "Infinity") return std::numeric_limits<double>::infinity();
  if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  throw DataError("bad metric value '" + s + "'");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace detail

inline nlohmann::json metrics_to_json(const Metrics& m) {
  return {{"CW", detail::metric_json(m.cw)},   {"APR", detail::metric_json(m.apr)},
          {"AVOL", detail::metric_json(m.avol)}, {"ASR", detail::metric_json(m.asr)},
          {"MDD", detail::metric_json(m.mdd)},   {"ACR", detail::metric_json(m.acr)},
          {"warnings", m.warnings}};
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.cw = detail::metric_from_json(j.at("CW"));
  m.apr = detail::metric_from_json(j.at("APR"));
  m.avol = detail::metric_from_json(j.at("AVOL"));
  m.asr = detail::metric_from_json(j.at("ASR"));
  m.mdd = detail::metric_from_json(j.at("MDD"));
  m.acr = detail::metric_from_json(j.at("ACR"));
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

/// Polyline of the wealth curve, one point per entry.
inline std::string wealth_svg(const std::vector<double>& wealth, const std::string& title) {
  const double width = 800, height = 400, pad = 40;
  double lo = wealth.front(), hi = wealth.front();
  for (double w : wealth) {
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double dx = wealth.size() > 1 ? (width - 2 * pad) / static_cast<double>(wealth.size() - 1) : 0.0;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
    << width << ' ' << height << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad << "\" y2=\"" << height - pad
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << height - pad
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"4\" y=\"" << pad + 4 << "\" font-family=\"sans-serif\" font-size=\"10\">" << csv::number(hi)
    << "</text>\n";
  s << "<text x=\"4\" y=\"" << height - pad << "\" font-family=\"sans-serif\" font-size=\"10\">" << csv::number(lo)
    << "</text>\n";
  s << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" points=\"";
  char buf[64];
  for (std::size_t i = 0; i < wealth.size(); ++i) {
    const double x = pad + dx * static_cast<double>(i);
    const double y = height - pad - (wealth[i] - lo) / (hi - lo) * (height - 2 * pad);
    std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", x, y);
    s << buf;
  }
  s << "\"/>\n</svg>\n";
  return s.str();
}

/// Writes metrics.json, wealth.csv, weights.csv and wealth.svg into `dir`.
inline void emit_report(const BacktestReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json mj = metrics_to_json(rep.metrics);
  mj["periods"] = rep.daily_returns.size();
  mj["first_date"] = rep.wealth_dates.front();
  mj["last_date"] = rep.wealth_dates.back();
  mj["config"] = rep.config;
  detail::write_text(dir / "metrics.json", mj.dump(2) + "\n");

  std::string w = "date,wealth,daily_return\n";
  for (std::size_t i = 0; i < rep.wealth.size(); ++i)
    w += csv::quote(rep.wealth_dates[i]) + ',' + csv::number(rep.wealth[i]) + ',' +
         (i ? csv::number(rep.daily_returns[i - 1]) : std::string()) + '\n';
  detail::write_text(dir / "wealth.csv", w);

  std::string b = "date";
  for (const auto& a : rep.assets) b += ',' + csv::quote(a);
  b += '\n';
  for (std::size_t k = 0; k < rep.portfolio.dates.size(); ++k) {
    b += csv::quote(rep.wealth_dates[k]);
    for (Eigen::Index i = 0; i < rep.portfolio.weights[k].size(); ++i) b += ',' + csv::number(rep.portfolio.weights[k](i));
    b += '\n';
  }
  detail::write_text(dir / "weights.csv", b);

  detail::write_text(dir / "wealth.svg", wealth_svg(rep.wealth, rep.config.value("strategy", std::string("wealth"))));
}

}  // namespace folio
