#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folio/autodiff.hpp"
#include "folio/error.hpp"

namespace folio {

enum class Objective { kMaxCum, kMaxSharpe, kMinDown };

inline const char* to_string(Objective o) {
  switch (o) {
    case Objective::kMaxCum: return "maxcum";
    case Objective::kMaxSharpe: return "maxsharpe";
    case Objective::kMinDown: return "mindown";
  }
  return "?";
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "maxcum") return Objective::kMaxCum;
  if (s == "maxsharpe") return Objective::kMaxSharpe;
  if (s == "mindown") return Objective::kMinDown;
  throw ConfigError("unknown objective '" + s + "' (expected maxcum, maxsharpe or mindown)");
}

/// b' r - cost * |b - b_prev|_1.
inline double portfolio_return(const Eigen::VectorXd& b, const Eigen::VectorXd& r, const Eigen::VectorXd& b_prev,
                               double cost) {
  if (b.size() != r.size() || b.size() != b_prev.size()) throw DataError("portfolio_return: dimension mismatch");
  const double gross = b.dot(r);
  return cost == 0.0 ? gross : gross - cost * (b - b_prev).cwiseAbs().sum();
}

/// Per-date portfolio returns for a batch: weights and realized are (G*N) x 1, result G x 1.
/// The first date of the batch pays no turnover.
inline ad::Var portfolio_returns(ad::Tape& tape, ad::Var weights, const ad::Tensor& realized, std::size_t assets,
                                 double cost) {
  if (cost < 0.0) throw ConfigError("transaction cost must be non-negative");
  const ad::Var gross = ad::group_sum(ad::mul(weights, tape.constant(realized)), assets);
  if (cost == 0.0) return gross;
  const std::size_t rows = weights.rows(), dates = rows / assets;
  if (dates < 2) return gross;
  const ad::Var moves = ad::abs(
      ad::sub(ad::slice_rows(weights, assets, rows - assets), ad::slice_rows(weights, 0, rows - assets)));
  const ad::Var turnover =
      ad::concat_rows({tape.constant(ad::Tensor(1, 1)), ad::group_sum(moves, assets)});
  return ad::sub(gross, ad::scale(turnover, cost));
}

/// Log of the cumulative wealth, sum log(1 + r_p); same maximizer as the product.
inline ad::Var loss_maxcum(ad::Var rp) { return ad::sum(ad::log(ad::add_scalar(rp, 1.0))); }

/// Cumulative wealth prod(1 + r_p).
inline double maxcum_value(const std::vector<double>& rp) {
  double w = 1.0;
  for (double r : rp) w *= 1.0 + r;
  return w;
}

inline ad::Var loss_maxsharpe(ad::Var rp) {
  if (rp.value().size() < 2) throw DataError("Sharpe objective needs at least two periods");
  return ad::div(ad::mean(rp), ad::stddev(rp));
}

/// -sum max(delta - r_p, 0). `delta` is 1 x 1 or matches `rp`.
inline ad::Var loss_mindown(ad::Var rp, ad::Var delta) { return ad::neg(ad::sum(ad::relu(ad::sub(delta, rp)))); }

/// sum over dates of the Euclidean norm of the prediction error.
inline ad::Var loss_prediction(ad::Tape& tape, ad::Var predicted, const ad::Tensor& realized, std::size_t assets) {
  return ad::sum(ad::group_l2norm(ad::sub(predicted, tape.constant(realized)), assets));
}

/// sum over dates and ordered pairs of max(-(p_i - p_j)(r_i - r_j), 0).
inline ad::Var loss_ranking(ad::Tape& tape, ad::Var predicted, const ad::Tensor& realized, std::size_t assets) {
  const ad::Var truth = ad::pairwise_diff(tape.constant(realized), assets);
  return ad::sum(ad::relu(ad::neg(ad::mul(ad::pairwise_diff(predicted, assets), truth))));
}

/// Log-variance loss weights s = log(zeta^2).
struct LossWeights {
  ad::Var s_m, s_p, s_r;
};

/// -e^{-s_m} L_obj + e^{-s_p} L_pred + e^{-s_r} L_rank + (s_m + s_p + s_r) / 2.
inline ad::Var combined_loss(ad::Var objective, ad::Var prediction, ad::Var ranking, const LossWeights& s) {
  const ad::Var obj = ad::neg(ad::mul(ad::exp(ad::neg(s.s_m)), objective));
  const ad::Var pred = ad::mul(ad::exp(ad::neg(s.s_p)), prediction);
  const ad::Var rank = ad::mul(ad::exp(ad::neg(s.s_r)), ranking);
  const ad::Var reg = ad::scale(ad::add(ad::add(s.s_m, s.s_p), s.s_r), 0.5);
  return ad::add(ad::add(ad::add(obj, pred), rank), reg);
}

}  // namespace folio
