#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folio/error.hpp"
#include "folio/market_data.hpp"

namespace folio {

inline constexpr double kDefaultRidge = 1e-8;

/// Trailing-window return covariances indexed by calendar position.
///
/// The matrix for date t is the sample covariance (divisor w - 1) of returns
/// r[t - w], ..., r[t - 1], i.e. of the w returns already realized by the close of t,
/// plus ridge * I. Dates t < w have no full window and are not emitted.
struct CovarianceSeries {
  std::size_t window = 0;
  double ridge = 0.0;
  std::size_t first = 0;  // calendar index of sigma[0]
  std::vector<Eigen::MatrixXd> sigma;

  bool has(std::size_t t) const { return t >= first && t - first < sigma.size(); }
  const Eigen::MatrixXd& at(std::size_t t) const {
    if (!has(t)) throw DataError("no covariance for calendar index " + std::to_string(t));
    return sigma[t - first];
  }
};

/// Sample covariance of the columns [first, first + w) of `r` (assets in rows).
inline Eigen::MatrixXd window_covariance(const Eigen::MatrixXd& r, Eigen::Index first, Eigen::Index w) {
  const Eigen::MatrixXd block = r.middleCols(first, w);
  // Shifted mean: exact for constant rows.
  const Eigen::VectorXd shift = block.col(0);
  const Eigen::VectorXd mean = shift + (block.colwise() - shift).rowwise().mean();
  const Eigen::MatrixXd centered = block.colwise() - mean;
  Eigen::MatrixXd cov = centered * centered.transpose() / static_cast<double>(w - 1);
  return (cov + cov.transpose()) * 0.5;
}

inline CovarianceSeries rolling_covariance(const ReturnMatrix& returns, std::size_t window, double ridge = kDefaultRidge) {
  if (window < 2) throw ConfigError("covariance window must be at least 2");
  if (ridge < 0.0 || !std::isfinite(ridge)) throw ConfigError("ridge must be finite and non-negative");
  CovarianceSeries out;
  out.window = window;
  out.ridge = ridge;
  out.first = window;
  const auto n = static_cast<Eigen::Index>(returns.num_assets());
  const auto w = static_cast<Eigen::Index>(window);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n) * ridge;
  // Date t sees returns r[0 .. t-1]; the last date with a realized window is t = periods.
  for (std::size_t t = window; t <= returns.num_periods(); ++t)
    out.sigma.push_back(window_covariance(returns.r, static_cast<Eigen::Index>(t) - w, w) + eye);
  return out;
}

/// Portfolio variance b' Sigma b.
inline double portfolio_risk(const Eigen::VectorXd& b, const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols() || sigma.rows() != b.size())
    throw DataError("portfolio_risk: dimension mismatch (" + std::to_string(b.size()) + " weights, " +
                    std::to_string(sigma.rows()) + "x" + std::to_string(sigma.cols()) + " covariance)");
  return b.dot(sigma * b);
}

/// Correlation matrix derived from a covariance; zero-variance assets get a unit diagonal.
inline Eigen::MatrixXd correlation_from_covariance(const Eigen::MatrixXd& sigma) {
  const Eigen::VectorXd sd = sigma.diagonal().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd c(sigma.rows(), sigma.cols());
  for (Eigen::Index i = 0; i < sigma.rows(); ++i)
    for (Eigen::Index k = 0; k < sigma.cols(); ++k) {
      const double den = sd(i) * sd(k);
      c(i, k) = i == k ? 1.0 : (den > 0.0 ? std::clamp(sigma(i, k) / den, -1.0, 1.0) : 0.0);
    }
  return c;
}

}  // namespace folio
