#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folio/autodiff.hpp"
#include "folio/covariance.hpp"
#include "folio/csv.hpp"
#include "folio/error.hpp"

namespace folio {

// ---------------------------------------------------------------------------
// Simplex geometry

/// Euclidean projection onto {b : b >= 0, sum b = 1} (sort-based).
inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  if (n == 0) throw DataError("cannot project an empty vector");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    cum += u[static_cast<std::size_t>(j)];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) tau = t;
  }
  return (v.array() - tau).cwiseMax(0.0).matrix();
}

/// Softmax with the max shift; identical arithmetic to ad::group_softmax.
inline Eigen::VectorXd softmax_weights(const Eigen::VectorXd& logits) {
  const Eigen::Index n = logits.size();
  Eigen::VectorXd out(n);
  double mx = logits(0);
  for (Eigen::Index i = 1; i < n; ++i) mx = std::max(mx, logits(i));
  double z = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) z += (out(i) = std::exp(logits(i) - mx));
  for (Eigen::Index i = 0; i < n; ++i) out(i) /= z;
  return out;
}

// ---------------------------------------------------------------------------
// Minimum-variance portfolio

struct MinVarPortfolio {
  Eigen::VectorXd weights;
  double risk = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration(const Eigen::MatrixXd& a, std::size_t max_iters = 1000, double tol = 1e-12) {
  const Eigen::Index n = a.rows();
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = 1.0 + 0.01 * static_cast<double>(i % 7) + 1e-3 * static_cast<double>(i);
  x.normalize();
  double lambda = 0.0;
  for (std::size_t k = 0; k < max_iters; ++k) {
    Eigen::VectorXd y = a * x;
    const double next = x.dot(y);
    const double nrm = y.norm();
    if (nrm == 0.0) return 0.0;
    x = y / nrm;
    if (std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

/// Minimizes b' Sigma b over the simplex by accelerated projected gradient with
/// adaptive restart, step 1/L with L = 2 lambda_max. Stops when the norm of the
/// gradient mapping drops below `tol`; otherwise returns the best iterate with
/// `converged = false`.
inline MinVarPortfolio min_variance(const Eigen::MatrixXd& sigma, double tol = 1e-10, std::size_t max_iters = 50000) {
  const Eigen::Index n = sigma.rows();
  if (n == 0 || sigma.cols() != n) throw DataError("min_variance needs a non-empty square covariance");
  if (!sigma.allFinite()) throw NumericalError("min_variance: non-finite covariance");
  MinVarPortfolio out;
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  const double lmax = power_iteration(sigma);
  if (!(lmax > 0.0)) {
    out.weights = x;
    out.risk = portfolio_risk(x, sigma);
    out.converged = true;
    return out;
  }
  const double lip = 2.0 * lmax * 1.01;
  auto mapping_norm = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd g = 2.0 * (sigma * b);
    return lip * (b - project_simplex(b - g / lip)).norm();
  };
  Eigen::VectorXd y = x, best = x;
  double best_risk = portfolio_risk(x, sigma), theta = 1.0;
  for (std::size_t k = 1; k <= max_iters; ++k) {
    const Eigen::VectorXd g = 2.0 * (sigma * y);
    const Eigen::VectorXd next = project_simplex(y - g / lip);
    const double r = portfolio_risk(next, sigma);
    if (r < best_risk) {
      best_risk = r;
      best = next;
    }
    out.iterations = k;
    if (mapping_norm(next) < tol) {
      out.weights = next;
      out.risk = r;
      out.converged = true;
      return out;
    }
    if ((y - next).dot(next - x) > 0.0) {
      theta = 1.0;  // restart momentum
      y = next;
    } else {
      const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
      y = next + ((theta - 1.0) / theta_next) * (next - x);
      theta = theta_next;
    }
    x = next;
  }
  out.weights = best;
  out.risk = best_risk;
  return out;
}

// ---------------------------------------------------------------------------
// Interpolation towards the minimum-variance portfolio

/// Coefficients of risk((1 - g) b + g b_m) = A g^2 + B g + C.
struct RiskQuadratic {
  double a = 0, b = 0, c = 0;
  double risk = 0;      // sigma_t = b' Sigma b
  double min_risk = 0;  // sigma_m = b_m' Sigma b_m
};

inline RiskQuadratic risk_quadratic(const Eigen::VectorXd& b, const Eigen::VectorXd& bm, const Eigen::MatrixXd& sigma) {
  if (b.size() != bm.size()) throw DataError("portfolio and min-variance portfolio differ in size");
  RiskQuadratic q;
  q.risk = portfolio_risk(b, sigma);
  q.min_risk = portfolio_risk(bm, sigma);
  const double cross = b.dot(sigma * bm);
  q.a = q.risk - 2.0 * cross + q.min_risk;
  q.b = 2.0 * (cross - q.risk);
  q.c = q.risk;
  return q;
}

struct InterpolationCoeff {
  double gamma = 0.0;
  bool clamped = false;
};

/// Below this A the risk is treated as linear in gamma.
inline constexpr double kQuadraticEpsilon = 1e-18;

/// Root in [0, 1] of A g^2 + B g + C = target for a quadratic that decreases on [0, 1].
/// Uses 2(C - target) / (-B + sqrt(D)), the smaller root without cancellation.
inline double decreasing_root(double a, double b, double c, double target) {
  if (a <= kQuadraticEpsilon) {
    if (b == 0.0) throw NumericalError("risk is constant in gamma");
    return (target - c) / b;
  }
  const double disc = std::max(b * b - 4.0 * a * (c - target), 0.0);
  const double den = -b + std::sqrt(disc);
  if (den == 0.0) return 1.0;
  return 2.0 * (c - target) / den;
}

/// Solves for the interpolation coefficient that brings the risk of `b` to `target`.
/// Targets outside [sigma_m, sigma_t] are clamped to the nearest endpoint and flagged.
inline InterpolationCoeff interpolation_coeff(const RiskQuadratic& q, double target) {
  if (!std::isfinite(target) || target < 0.0) throw ConfigError("target risk must be finite and non-negative");
  const double scale = std::max({std::abs(q.risk), std::abs(q.min_risk), std::numeric_limits<double>::min()});
  if (q.risk - q.min_risk <= 1e-15 * scale) {
    if (std::abs(target - q.risk) <= 1e-12 * scale) return {0.0, false};
    throw NumericalError("portfolio already has minimum risk; target " + csv::number(target) +
                         " is unreachable by interpolation");
  }
  if (target >= q.risk) return {0.0, target > q.risk};
  if (target <= q.min_risk) return {1.0, target < q.min_risk};
  return {std::clamp(decreasing_root(q.a, q.b, q.c, target), 0.0, 1.0), false};
}

inline InterpolationCoeff interpolation_coeff(const Eigen::VectorXd& b, const Eigen::VectorXd& bm,
                                              const Eigen::MatrixXd& sigma, double target) {
  return interpolation_coeff(risk_quadratic(b, bm, sigma), target);
}

inline Eigen::VectorXd interpolate(const Eigen::VectorXd& b, const Eigen::VectorXd& bm, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("interpolation coefficient must lie in [0, 1]");
  if (b.size() != bm.size()) throw DataError("interpolate: dimension mismatch");
  return (1.0 - gamma) * b + gamma * bm;
}

struct RiskAdjustment {
  double gamma = 0.0;
  Eigen::VectorXd weights;
  double achieved_risk = 0.0;
  bool clamped = false;
  double target = 0.0;
};

inline RiskAdjustment adjust_risk(const Eigen::VectorXd& b, const Eigen::VectorXd& bm, const Eigen::MatrixXd& sigma,
                                  double target) {
  const InterpolationCoeff g = interpolation_coeff(b, bm, sigma, target);
  RiskAdjustment out;
  out.gamma = g.gamma;
  out.clamped = g.clamped;
  out.weights = interpolate(b, bm, g.gamma);
  out.achieved_risk = portfolio_risk(out.weights, sigma);
  out.target = target;
  return out;
}

/// gamma(A, B, C) per entry of G x 1 vectors, differentiated implicitly through
/// A g^2 + B g + C = target. Clamped entries are constant.
inline ad::Var interpolation_gamma(ad::Var a, ad::Var b, ad::Var c, const std::vector<double>& target,
                                   const std::vector<double>& min_risk) {
  const ad::Tensor& av = a.value();
  const ad::Tensor& bv = b.value();
  const ad::Tensor& cv = c.value();
  const std::size_t g = av.size();
  if (bv.size() != g || cv.size() != g || target.size() != g || min_risk.size() != g)
    throw std::invalid_argument("interpolation_gamma: size mismatch");
  ad::Tensor out(g, 1);
  std::vector<char> active(g, 0);
  for (std::size_t k = 0; k < g; ++k) {
    RiskQuadratic q{av[k], bv[k], cv[k], cv[k], min_risk[k]};
    const InterpolationCoeff ic = interpolation_coeff(q, target[k]);
    out[k] = ic.gamma;
    active[k] = !ic.clamped && ic.gamma > 0.0 && ic.gamma < 1.0;
  }
  const std::size_t ia = a.id, ib = b.id, ic = c.id;
  return a.tape->record(
      std::move(out), {ia, ib, ic},
      [ia, ib, ic, active](ad::Tape& t, std::size_t self) {
        const ad::Tensor& go = t.out_grad(self);
        const ad::Tensor& gam = t.value(self);
        const ad::Tensor& av = t.value(ia);
        const ad::Tensor& bv = t.value(ib);
        ad::Tensor* ga = t.grad_slot(ia);
        ad::Tensor* gb = t.grad_slot(ib);
        ad::Tensor* gc = t.grad_slot(ic);
        for (std::size_t k = 0; k < gam.size(); ++k) {
          if (!active[k]) continue;
          const double fg = 2.0 * av[k] * gam[k] + bv[k];  // d/dgamma of the quadratic
          if (fg == 0.0) throw NumericalError("interpolation gradient undefined at a double root");
          const double s = -go[k] / fg;
          if (ga) (*ga)[k] += s * gam[k] * gam[k];
          if (gb) (*gb)[k] += s * gam[k];
          if (gc) (*gc)[k] += s;
        }
      },
      "interpolation_gamma");
}

// ---------------------------------------------------------------------------
// Portfolio improvement

struct ImproveOptions {
  std::size_t steps = 30;
  double lr = 0.05;
  double return_weight = 0.0;   // weight of the predicted-return term; 0 minimizes sum gamma only
  bool literal_product = false;  // -w * prod(b' rhat) instead of -w * sum log(1 + b' rhat)
  std::size_t max_halvings = 40;
  double min_discriminant = 1e-300;
};

struct ImproveResult {
  std::vector<Eigen::VectorXd> logits;
  std::vector<RiskAdjustment> adjustments;
  std::vector<double> gamma_sum_history;  // initial value, then one per accepted step
  std::vector<double> objective_history;
  std::vector<double> max_risk_error;     // per iterate, over unclamped dates
  std::size_t accepted_steps = 0;
  bool stalled = false;  // a step found no acceptable size
  std::string warning;
};

namespace detail {

struct ImproveEval {
  std::vector<RiskAdjustment> adj;
  double gamma_sum = 0.0;
  double objective = 0.0;
  double max_risk_error = 0.0;
};

inline ImproveEval improve_evaluate(const std::vector<Eigen::VectorXd>& logits, const std::vector<Eigen::VectorXd>& bm,
                                    const std::vector<Eigen::MatrixXd>& sigma, double target,
                                    const std::vector<Eigen::VectorXd>* predicted, const ImproveOptions& opt) {
  ImproveEval e;
  double ret_term = 0.0, prod = 1.0;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const Eigen::VectorXd b = softmax_weights(logits[t]);
    e.adj.push_back(adjust_risk(b, bm[t], sigma[t], target));
    e.gamma_sum += e.adj.back().gamma;
    if (!e.adj.back().clamped)
      e.max_risk_error = std::max(e.max_risk_error, std::abs(e.adj.back().achieved_risk - target));
    if (predicted && opt.return_weight != 0.0) {
      const double pr = b.dot((*predicted)[t]);
      if (opt.literal_product) {
        prod *= pr;
      } else {
        if (!(1.0 + pr > 0.0)) throw NumericalError("predicted portfolio return at or below -100%");
        ret_term += std::log1p(pr);
      }
    }
  }
  if (predicted && opt.return_weight != 0.0) ret_term = opt.literal_product ? prod : ret_term;
  e.objective = e.gamma_sum - opt.return_weight * ret_term;
  return e;
}

}  // namespace detail

/// Gradient descent on pre-softmax logits that lowers the interpolation coefficients
/// needed to meet `target` (optionally trading off predicted return), with
/// backtracking. A step is accepted only if the objective does not increase, no
/// previously unclamped date becomes clamped, and every discriminant stays positive.
inline ImproveResult improve(const std::vector<Eigen::VectorXd>& logits, const std::vector<Eigen::VectorXd>& bm,
                             const std::vector<Eigen::MatrixXd>& sigma, double target, const ImproveOptions& opt = {},
                             const std::vector<Eigen::VectorXd>* predicted = nullptr) {
  const std::size_t g = logits.size();
  if (bm.size() != g || sigma.size() != g || (predicted && predicted->size() != g))
    throw DataError("improve: series lengths differ");
  if (g == 0) throw DataError("improve: empty series");
  if (!(opt.lr > 0.0)) throw ConfigError("improvement learning rate must be positive");
  const std::size_t n = static_cast<std::size_t>(logits[0].size());
  for (const auto& v : logits)
    if (static_cast<std::size_t>(v.size()) != n) throw DataError("improve: ragged logits");

  ImproveResult res;
  res.logits = logits;
  detail::ImproveEval cur = detail::improve_evaluate(logits, bm, sigma, target, predicted, opt);
  res.adjustments = cur.adj;
  res.gamma_sum_history.push_back(cur.gamma_sum);
  res.objective_history.push_back(cur.objective);
  res.max_risk_error.push_back(cur.max_risk_error);
  std::vector<char> clamped0(g);
  for (std::size_t t = 0; t < g; ++t) clamped0[t] = cur.adj[t].clamped;

  // Constants of the per-date quadratic.
  ad::Tensor sig_blocks(g * n, n), sig_bm(g * n, 1), pred_t(g * n, 1);
  std::vector<double> min_risk(g), targets(g, target);
  for (std::size_t t = 0; t < g; ++t) {
    const Eigen::VectorXd sb = sigma[t] * bm[t];
    min_risk[t] = bm[t].dot(sb);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ei = static_cast<Eigen::Index>(i);
      for (std::size_t j = 0; j < n; ++j) sig_blocks(t * n + i, j) = sigma[t](ei, static_cast<Eigen::Index>(j));
      sig_bm[t * n + i] = sb(ei);
      if (predicted) pred_t[t * n + i] = (*predicted)[t](ei);
    }
  }
  ad::Tensor min_risk_t(g, 1, min_risk);

  std::vector<Eigen::VectorXd> v = logits;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    ad::Tape tape;
    ad::Tensor flat(g * n, 1);
    for (std::size_t t = 0; t < g; ++t)
      for (std::size_t i = 0; i < n; ++i) flat[t * n + i] = v[t](static_cast<Eigen::Index>(i));
    const ad::Var lv = tape.parameter(flat);
    const ad::Var b = ad::group_softmax(lv, n);
    const ad::Var risk = ad::group_sum(ad::mul(b, ad::group_matmul(tape.constant(sig_blocks), b)), n);
    const ad::Var cross = ad::group_sum(ad::mul(b, tape.constant(sig_bm)), n);
    const ad::Var qa = ad::add(ad::sub(risk, ad::scale(cross, 2.0)), tape.constant(min_risk_t));
    const ad::Var qb = ad::scale(ad::sub(cross, risk), 2.0);
    ad::Var loss;
    try {
      loss = ad::sum(interpolation_gamma(qa, qb, risk, targets, min_risk));
    } catch (const NumericalError&) {
      res.stalled = true;
      break;
    }
    if (predicted && opt.return_weight != 0.0) {
      const ad::Var pr = ad::group_sum(ad::mul(b, tape.constant(pred_t)), n);
      ad::Var term;
      if (opt.literal_product) {
        term = ad::slice_rows(pr, 0, 1);
        for (std::size_t t = 1; t < g; ++t) term = ad::mul(term, ad::slice_rows(pr, t, 1));
      } else {
        term = ad::sum(ad::log(ad::add_scalar(pr, 1.0)));
      }
      loss = ad::sub(loss, ad::scale(term, opt.return_weight));
    }
    try {
      tape.backward(loss);
    } catch (const NumericalError&) {
      res.stalled = true;
      break;
    }
    const ad::Tensor grad = tape.grad(lv);

    bool accepted = false;
    double lr = opt.lr;
    for (std::size_t h = 0; h <= opt.max_halvings && !accepted; ++h, lr *= 0.5) {
      std::vector<Eigen::VectorXd> trial = v;
      for (std::size_t t = 0; t < g; ++t)
        for (std::size_t i = 0; i < n; ++i) trial[t](static_cast<Eigen::Index>(i)) -= lr * grad[t * n + i];
      detail::ImproveEval e;
      try {
        e = detail::improve_evaluate(trial, bm, sigma, target, predicted, opt);
      } catch (const NumericalError&) {
        continue;
      }
      bool ok = std::isfinite(e.objective) && e.objective <= cur.objective;
      for (std::size_t t = 0; ok && t < g; ++t) {
        if (e.adj[t].clamped && !clamped0[t]) ok = false;
        if (!e.adj[t].clamped) {
          const RiskQuadratic q = risk_quadratic(softmax_weights(trial[t]), bm[t], sigma[t]);
          if (q.b * q.b - 4.0 * q.a * (q.c - target) < opt.min_discriminant && q.a > kQuadraticEpsilon) ok = false;
        }
      }
      if (!ok) continue;
      v = std::move(trial);
      cur = std::move(e);
      accepted = true;
    }
    if (!accepted) {
      res.stalled = true;
      break;
    }
    ++res.accepted_steps;
    res.gamma_sum_history.push_back(cur.gamma_sum);
    res.objective_history.push_back(cur.objective);
    res.max_risk_error.push_back(cur.max_risk_error);
  }

  if (opt.steps > 0 && res.accepted_steps == 0) {
    res.warning = "no improvement step was accepted; returning the initial portfolio";
    return res;
  }
  res.logits = std::move(v);
  res.adjustments = std::move(cur.adj);
  return res;
}

}  // namespace folio
