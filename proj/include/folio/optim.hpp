#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "folio/autodiff.hpp"
#include "folio/error.hpp"

namespace folio::ad {

inline constexpr const char* kParamsFormat = "folio-params/1";

/// Named trainable tensors, kept in insertion order.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool decay = true;  // subject to weight decay
  };

  Tensor& add(std::string name, Tensor value, bool decay = true) {
    if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
    entries_.push_back({std::move(name), std::move(value), decay});
    return entries_.back().value;
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }
  Tensor& at(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return e.value;
    throw std::out_of_range("no parameter " + name);
  }
  const Tensor& at(const std::string& name) const {
    if (const Entry* e = find(name)) return e->value;
    throw std::out_of_range("no parameter " + name);
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool operator==(const ParamStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name != o.entries_[i].name || !(entries_[i].value == o.entries_[i].value)) return false;
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

/// Flat (name, shape, values) list.
inline nlohmann::json params_to_json(const ParamStore& store) {
  nlohmann::json j;
  j["format"] = kParamsFormat;
  j["params"] = nlohmann::json::array();
  for (const auto& e : store.entries())
    j["params"].push_back({{"name", e.name}, {"shape", e.value.shape()}, {"decay", e.decay}, {"values", e.value.values()}});
  return j;
}

inline ParamStore params_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kParamsFormat)
    throw DataError(std::string("parameter container is not tagged ") + kParamsFormat);
  ParamStore store;
  try {
    for (const auto& p : j.at("params")) {
      const auto shape = p.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw DataError("parameter " + p.at("name").get<std::string>() + " is not 2-D");
      store.add(p.at("name").get<std::string>(), Tensor(shape[0], shape[1], p.at("values").get<std::vector<double>>()),
                p.value("decay", true));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed parameter container: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("malformed parameter container: ") + e.what());
  }
  return store;
}

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay (decay applied to the weights, not the gradient).
class AdamW {
 public:
  explicit AdamW(AdamWOptions opt = {}) : opt_(opt) {
    if (!(opt_.lr > 0.0)) throw ConfigError("AdamW learning rate must be positive");
    if (opt_.beta1 < 0.0 || opt_.beta1 >= 1.0 || opt_.beta2 < 0.0 || opt_.beta2 >= 1.0)
      throw ConfigError("AdamW betas must lie in [0, 1)");
    if (opt_.weight_decay < 0.0) throw ConfigError("AdamW weight decay must be non-negative");
  }

  /// `grads[i]` pairs with `store.entries()[i]`.
  void step(ParamStore& store, const std::vector<Tensor>& grads) {
    auto& entries = store.entries();
    if (grads.size() != entries.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
    if (m_.empty()) {
      for (const auto& e : entries) {
        m_.emplace_back(e.value.rows(), e.value.cols());
        v_.emplace_back(e.value.rows(), e.value.cols());
      }
    }
    if (m_.size() != entries.size()) throw std::invalid_argument("AdamW: parameter set changed");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Tensor& w = entries[p].value;
      const Tensor& g = grads[p];
      if (!g.same_shape(w)) throw std::invalid_argument("AdamW: gradient shape mismatch for " + entries[p].name);
      const double decay = entries[p].decay ? 1.0 - opt_.lr * opt_.weight_decay : 1.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[p][i] = opt_.beta1 * m_[p][i] + (1.0 - opt_.beta1) * g[i];
        v_[p][i] = opt_.beta2 * v_[p][i] + (1.0 - opt_.beta2) * g[i] * g[i];
        const double mhat = m_[p][i] / c1, vhat = v_[p][i] / c2;
        w[i] = w[i] * decay - opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const AdamWOptions& options() const { return opt_; }

 private:
  AdamWOptions opt_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace folio::ad
