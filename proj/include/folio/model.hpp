#pragma once

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folio/autodiff.hpp"
#include "folio/dataset.hpp"
#include "folio/optim.hpp"

// Spatio-temporal asset scorer.
//
//   h_i   = LSTM over the feature window of asset i (weights shared by all assets)
//   a     = softmax_k(w . h_k)                       one attention vector per date
//   hh_i  = sum_k a_k h_k / (beta + 1) + beta / (beta + 1) * sum_k c_ik h_k
//   v_i   = MLP_p(hh_i),  b = softmax(v),  rhat_i = MLP_r(hh_i)
//
// The attention weights do not depend on the query asset i. c is the
// correlation (default) or covariance matrix of the trailing returns.
//
// A batch holds G decision dates; row g * N + i is asset i on date g.

namespace folio {

enum class MixingMode { kCorrelation, kCovariance };

inline const char* to_string(MixingMode m) { return m == MixingMode::kCorrelation ? "correlation" : "covariance"; }

inline MixingMode mixing_from_string(const std::string& s) {
  if (s == "correlation") return MixingMode::kCorrelation;
  if (s == "covariance") return MixingMode::kCovariance;
  throw ConfigError("unknown mixing mode '" + s + "' (expected correlation or covariance)");
}

struct ModelConfig {
  std::size_t hidden = 64;
  MixingMode mixing = MixingMode::kCorrelation;
};

/// Model inputs for G dates.
struct ModelBatch {
  std::size_t assets = 0;
  std::size_t dates = 0;
  std::vector<ad::Tensor> steps;  // w tensors, each (G*N) x 8, oldest first
  ad::Tensor mixing;              // (G*N) x N
  ad::Tensor realized;            // (G*N) x 1, r[t] per asset
};

struct ModelOutput {
  ad::Var logits;     // (G*N) x 1
  ad::Var weights;    // softmax of logits per date
  ad::Var predicted;  // predicted next-period returns
};

inline ModelBatch make_batch(const Dataset& ds, std::span<const std::size_t> dates, MixingMode mixing) {
  const std::size_t n = ds.num_assets(), w = ds.window, g = dates.size();
  ModelBatch b;
  b.assets = n;
  b.dates = g;
  b.steps.assign(w, ad::Tensor(g * n, kNumFeatures));
  b.mixing = ad::Tensor(g * n, n);
  b.realized = ad::Tensor(g * n, 1);
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t t = dates[k];
    if (t + 1 < w) throw DataError("decision date lacks a full feature window");
    const Eigen::MatrixXd& sigma = ds.cov.at(t);
    const Eigen::MatrixXd c = mixing == MixingMode::kCorrelation ? correlation_from_covariance(sigma) : sigma;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = k * n + i;
      for (std::size_t s = 0; s < w; ++s) {
        const double* x = ds.features.row(i, t + 1 - w + s);
        for (std::size_t f = 0; f < kNumFeatures; ++f) {
          if (!std::isfinite(x[f])) throw NumericalError("non-finite feature for " + ds.assets[i]);
          b.steps[s](row, f) = x[f];
        }
      }
      for (std::size_t j = 0; j < n; ++j)
        b.mixing(row, j) = c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (t >= ds.returns.num_periods()) throw DataError("decision date has no realized return");
      b.realized(row, 0) = ds.returns.r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
    }
  }
  return b;
}

/// Parameters with uniform(-1/sqrt(d), 1/sqrt(d)) matrices, forget-gate bias 1 and beta = 1.
inline ad::ParamStore init_model_params(std::size_t hidden, std::uint64_t seed) {
  if (hidden == 0) throw ConfigError("hidden size must be positive");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto uniform = [&](std::size_t r, std::size_t c) {
    ad::Tensor t(r, c);
    for (double& v : t.values()) v = u(rng);
    return t;
  };
  const std::size_t d = hidden;
  ad::ParamStore p;
  p.add("lstm.w_ih", uniform(kNumFeatures, 4 * d));
  p.add("lstm.w_hh", uniform(d, 4 * d));
  ad::Tensor bias(1, 4 * d);
  for (std::size_t j = d; j < 2 * d; ++j) bias[j] = 1.0;  // gate order i, f, g, o
  p.add("lstm.bias", bias, false);
  p.add("attn.w", uniform(d, 1));
  p.add("beta_raw", ad::Tensor::scalar(std::log(std::exp(1.0) - 1.0)), false);
  for (const char* head : {"mlp_p", "mlp_r"}) {
    const std::string h = head;
    p.add(h + ".w1", uniform(d, d));
    p.add(h + ".b1", ad::Tensor(1, d), false);
    p.add(h + ".w2", uniform(d, 1));
    p.add(h + ".b2", ad::Tensor(1, 1), false);
  }
  return p;
}

inline std::size_t hidden_size(const ad::ParamStore& p) { return p.at("lstm.w_hh").rows(); }

/// Tape handles for every parameter, in store order.
struct BoundParams {
  std::vector<std::string> names;
  std::vector<ad::Var> vars;

  ad::Var operator[](const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return vars[i];
    throw std::out_of_range("unbound parameter " + name);
  }
};

inline BoundParams bind(ad::Tape& tape, const ad::ParamStore& store, bool trainable) {
  BoundParams b;
  for (const auto& e : store.entries()) {
    b.names.push_back(e.name);
    b.vars.push_back(trainable ? tape.parameter(e.value) : tape.constant(e.value));
  }
  return b;
}

/// Final LSTM hidden state per row: (G*N) x d.
inline ad::Var encode_temporal(ad::Tape& tape, const BoundParams& p, const std::vector<ad::Tensor>& steps) {
  if (steps.empty()) throw DataError("empty feature window");
  const ad::Var w_ih = p["lstm.w_ih"], w_hh = p["lstm.w_hh"], bias = p["lstm.bias"];
  const std::size_t d = w_hh.rows(), rows = steps[0].rows();
  ad::Var h = tape.constant(ad::Tensor(rows, d));
  ad::Var c = tape.constant(ad::Tensor(rows, d));
  for (const ad::Tensor& x : steps) {
    if (!x.all_finite()) throw NumericalError("non-finite feature in LSTM input");
    const ad::Var gates = ad::add(ad::add(ad::matmul(tape.constant(x), w_ih), ad::matmul(h, w_hh)), bias);
    const ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, d));
    const ad::Var f = ad::sigmoid(ad::slice_cols(gates, d, d));
    const ad::Var g = ad::tanh(ad::slice_cols(gates, 2 * d, d));
    const ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * d, d));
    c = ad::add(ad::mul(f, c), ad::mul(i, g));
    h = ad::mul(o, ad::tanh(c));
  }
  return h;
}

/// Attention pooling mixed with the asset-relation matrix; `mixing` is (G*N) x N.
inline ad::Var encode_spatial(ad::Tape& tape, const BoundParams& p, ad::Var h, const ad::Tensor& mixing) {
  const std::size_t n = mixing.cols();
  if (mixing.rows() != h.rows() || n == 0 || h.rows() % n != 0)
    throw DataError("encode_spatial: mixing matrix " + ad::shape_str(mixing) + " does not match hidden states " +
                    ad::shape_str(h.value()));
  const ad::Var alpha = ad::group_softmax(ad::matmul(h, p["attn.w"]), n);
  const ad::Var pooled = ad::repeat_rows(ad::group_sum(ad::mul(h, alpha), n), n);
  const ad::Var related = ad::group_matmul(tape.constant(mixing), h);
  const ad::Var beta = ad::softplus(p["beta_raw"]);
  const ad::Var inv = ad::div(tape.constant(ad::Tensor::scalar(1.0)), ad::add_scalar(beta, 1.0));
  return ad::add(ad::mul(pooled, inv), ad::mul(related, ad::mul(beta, inv)));
}

inline ad::Var mlp_head(const BoundParams& p, const std::string& head, ad::Var x) {
  const ad::Var hidden = ad::relu(ad::add(ad::matmul(x, p[head + ".w1"]), p[head + ".b1"]));
  return ad::add(ad::matmul(hidden, p[head + ".w2"]), p[head + ".b2"]);
}

inline ModelOutput forward(ad::Tape& tape, const BoundParams& p, const ModelBatch& batch) {
  const ad::Var h = encode_temporal(tape, p, batch.steps);
  const ad::Var hh = encode_spatial(tape, p, h, batch.mixing);
  ModelOutput out;
  out.logits = mlp_head(p, "mlp_p", hh);
  out.weights = ad::group_softmax(out.logits, batch.assets);
  out.predicted = mlp_head(p, "mlp_r", hh);
  return out;
}

/// Per-date model outputs as plain vectors.
struct Prediction {
  std::vector<std::size_t> dates;
  std::vector<Eigen::VectorXd> logits, weights, predicted;
};

/// Evaluates the model without gradients, `chunk` dates per tape.
inline Prediction predict(const ad::ParamStore& params, const ModelConfig& cfg, const Dataset& ds,
                          std::span<const std::size_t> dates, std::size_t chunk = 128) {
  Prediction out;
  const std::size_t n = ds.num_assets();
  for (std::size_t first = 0; first < dates.size(); first += chunk) {
    const auto part = dates.subspan(first, std::min(chunk, dates.size() - first));
    const ModelBatch batch = make_batch(ds, part, cfg.mixing);
    ad::Tape tape;
    const BoundParams bound = bind(tape, params, false);
    const ModelOutput o = forward(tape, bound, batch);
    for (std::size_t k = 0; k < part.size(); ++k) {
      out.dates.push_back(part[k]);
      Eigen::VectorXd v(n), b(n), r(n);
      for (std::size_t i = 0; i < n; ++i) {
        v(static_cast<Eigen::Index>(i)) = o.logits.value()[k * n + i];
        b(static_cast<Eigen::Index>(i)) = o.weights.value()[k * n + i];
        r(static_cast<Eigen::Index>(i)) = o.predicted.value()[k * n + i];
      }
      out.logits.push_back(std::move(v));
      out.weights.push_back(std::move(b));
      out.predicted.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace folio
