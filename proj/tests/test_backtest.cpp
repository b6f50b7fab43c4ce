#include <gtest/gtest.h>

#include "folio/backtest.hpp"
#include "folio/synthetic.hpp"
#include "support.hpp"

using namespace folio;
using namespace testing_support;

namespace {

struct Reference {
  double cw, apr, avol, asr, mdd, acr;
};

Reference reference_metrics(const std::vector<double>& r, double a) {
  Reference m{};
  double w = 1.0, peak = 1.0, mdd = 0.0, sum = 0.0;
  for (double x : r) {
    w *= 1.0 + x;
    peak = std::max(peak, w);
    mdd = std::min(mdd, w / peak - 1.0);
    sum += x;
  }
  const double n = static_cast<double>(r.size()), mean = sum / n;
  double ss = 0.0;
  for (double x : r) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  m.cw = w;
  m.apr = std::pow(w, a / n) - 1.0;
  m.avol = sd * std::sqrt(a);
  m.asr = mean / sd * std::sqrt(a);
  m.mdd = mdd;
  m.acr = m.apr / -mdd;
  return m;
}

std::vector<double> wealth_of(const std::vector<double>& r) {
  std::vector<double> w{1.0};
  for (double x : r) w.push_back(w.back() * (1.0 + x));
  return w;
}

std::vector<std::string> calendar(std::size_t n) {
  std::vector<std::string> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(add_days("2022-01-01", static_cast<int>(i)));
  return c;
}

}  // namespace

TEST(Metrics, SingleAssetUpThenDown) {
  ReturnMatrix r;
  r.r.resize(1, 2);
  r.r << 0.1, -0.1;
  const BacktestReport rep = run_backtest(baseline_market(1, {0, 1}), r, 0.0, calendar(3), {"A"}, 252);
  EXPECT_NEAR(rep.metrics.cw, 0.99, 1e-15);
  EXPECT_EQ(rep.wealth.front(), 1.0);
  EXPECT_NEAR(rep.metrics.mdd, 0.99 / 1.1 - 1.0, 1e-15);
  EXPECT_EQ(rep.wealth_dates.back(), "2022-01-03");
}

TEST(Metrics, ConstantDailyReturnAnnualizes) {
  const std::vector<double> r(252, 0.001);
  const Metrics m = compute_metrics(wealth_of(r), r, 252);
  double cw = 1.0;
  for (int k = 0; k < 252; ++k) cw *= 1.001;
  EXPECT_NEAR(m.cw, cw, 1e-12);
  EXPECT_NEAR(m.apr, cw - 1.0, 1e-12);
  EXPECT_NEAR(m.apr, 0.2864340, 1e-6);
  EXPECT_EQ(m.mdd, 0.0);
  EXPECT_TRUE(std::isinf(m.acr) && m.acr > 0);
}

TEST(Metrics, DrawdownPeakTroughScan) {
  EXPECT_NEAR(max_drawdown({1.0, 1.2, 0.9, 1.1}), -0.25, 1e-15);
  EXPECT_EQ(max_drawdown({1.0, 1.1, 1.2, 1.3}), 0.0);
}

TEST(Metrics, ZeroReturns) {
  const std::vector<double> r(10, 0.0);
  const Metrics m = compute_metrics(wealth_of(r), r, 252);
  EXPECT_EQ(m.cw, 1.0);
  EXPECT_EQ(m.apr, 0.0);
  EXPECT_EQ(m.avol, 0.0);
  EXPECT_EQ(m.mdd, 0.0);
  EXPECT_TRUE(std::isnan(m.asr));
  EXPECT_EQ(m.warnings.size(), 2u);
}

TEST(Metrics, MatchesScalarReferenceOnRandomSeries) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0.0, 0.02);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> r(10);
    for (double& x : r) x = z(rng);
    r[3] = -0.05;
    const Metrics m = compute_metrics(wealth_of(r), r, 365);
    const Reference e = reference_metrics(r, 365);
    EXPECT_NEAR(m.cw, e.cw, 1e-12);
    EXPECT_NEAR(m.apr, e.apr, 1e-12);
    EXPECT_NEAR(m.avol, e.avol, 1e-12);
    EXPECT_NEAR(m.asr, e.asr, 1e-12);
    EXPECT_NEAR(m.mdd, e.mdd, 1e-12);
    EXPECT_NEAR(m.acr, e.acr, 1e-12);
    EXPECT_LE(m.mdd, 0.0);
    if (m.mdd < 0.0) {
      EXPECT_EQ(std::signbit(m.acr), std::signbit(m.apr));
    }
  }
}

TEST(Metrics, InputValidation) {
  EXPECT_THROW(compute_metrics({1.0, 1.0}, {0.0}, 252), DataError);
  EXPECT_THROW(compute_metrics({1.0, 1.0, 1.0}, {0.0}, 252), DataError);
  EXPECT_THROW(compute_metrics({1.0, 1.0, 1.0}, {0.0, 0.0}, 0), ConfigError);
}

TEST(Backtest, WealthRecursionAndTurnoverCost) {
  ReturnMatrix r;
  r.r.resize(2, 3);
  r.r << 0.01, 0.02, -0.01, -0.01, 0.0, 0.03;
  PortfolioSeries p;
  p.dates = {0, 1, 2};
  p.weights = {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.5, 0.5), Eigen::Vector2d(0.5, 0.5)};
  const BacktestReport rep = run_backtest(p, r, 0.01, calendar(4), {"A", "B"}, 252);
  EXPECT_NEAR(rep.daily_returns[0], 0.01, 1e-15);
  EXPECT_NEAR(rep.daily_returns[1], 0.01 - 0.01 * 1.0, 1e-15);
  EXPECT_NEAR(rep.daily_returns[2], 0.01, 1e-15);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(rep.wealth[k + 1], rep.wealth[k] * (1.0 + rep.daily_returns[k]));
  EXPECT_EQ(rep.metrics.cw, rep.wealth.back());
  p.dates = {0, 2, 3};
  EXPECT_THROW(run_backtest(p, r, 0.0, calendar(4), {"A", "B"}, 252), DataError);
  p.dates = {0, 1, 2};
  EXPECT_THROW(run_backtest(p, r, -0.1, calendar(4), {"A", "B"}, 252), ConfigError);
}

TEST(Backtest, MinVarianceBaselineHasLowerInSampleRisk) {
  const MarketPanel panel = synthetic_market({.days = 200, .drift = {0.001, 0.0, -0.001, 0.0}, .seed = 5});
  const ReturnMatrix r = compute_returns(panel);
  const CovarianceSeries cov = rolling_covariance(r, 20, 1e-8);
  std::vector<std::size_t> dates;
  for (std::size_t t = 20; t < 150; ++t) dates.push_back(t);
  const PortfolioSeries mvm = baseline_mvm(cov, dates), mkt = baseline_market(4, dates);
  for (std::size_t k = 0; k < dates.size(); ++k) {
    EXPECT_NEAR(mvm.weights[k].sum(), 1.0, 1e-12);
    EXPECT_GE(mvm.weights[k].minCoeff(), 0.0);
    EXPECT_LE(portfolio_risk(mvm.weights[k], cov.at(dates[k])), portfolio_risk(mkt.weights[k], cov.at(dates[k])) + 1e-12);
  }
}

TEST(Report, FilesAndSentinelRoundTrip) {
  TempDir dir("bt");
  ReturnMatrix r;
  r.r = Eigen::MatrixXd::Zero(2, 5);
  BacktestReport rep = run_backtest(baseline_market(2, {0, 1, 2, 3, 4}), r, 0.0, calendar(6), {"A", "B"}, 252);
  rep.config = {{"strategy", "Market"}};
  emit_report(rep, dir / "out");
  const auto j = nlohmann::json::parse(read_file(dir / "out/metrics.json"));
  EXPECT_EQ(j.at("ASR"), "NaN");
  EXPECT_EQ(j.at("ACR"), "Infinity");
  EXPECT_EQ(j.at("periods"), 5);
  const Metrics m = metrics_from_json(j);
  EXPECT_TRUE(std::isnan(m.asr));
  EXPECT_TRUE(std::isinf(m.acr));
  EXPECT_EQ(m.cw, 1.0);
  const std::string wealth = read_file(dir / "out/wealth.csv");
  EXPECT_EQ(std::count(wealth.begin(), wealth.end(), '\n'), 7);
  const std::string weights = read_file(dir / "out/weights.csv");
  EXPECT_EQ(weights.substr(0, weights.find('\n')), "date,A,B");
  const std::string svg = read_file(dir / "out/wealth.svg");
  const std::string pts = svg.substr(svg.find("points=\""));
  EXPECT_EQ(std::count(pts.begin(), pts.begin() + static_cast<long>(pts.find("\"/>")), ','), 6);
  EXPECT_THROW(metrics_from_json(nlohmann::json{{"CW", "huge"}}), DataError);
}
