#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "folio/error.hpp"

// Reverse-mode differentiation over dense 2-D tensors.
//
// Every op appends a node to a Tape; node ids are a topological order, so
// backward() walks them once in reverse. Values are row-major doubles.

namespace folio::ad {

class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) throw std::invalid_argument("tensor value count does not match shape");
  }
  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor column(std::vector<double> v) {
    const auto n = v.size();
    return Tensor(n, 1, std::move(v));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const {
    if (size() != 1) throw std::invalid_argument("item() on a non-scalar tensor");
    return data_[0];
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  bool operator==(const Tensor& o) const = default;

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMajor> map() { return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)}; }
  Eigen::Map<const RowMajor> map() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  double item() const { return value().item(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  /// Accumulates the gradient of the node `self` into its inputs.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor v) { return push(std::move(v), {}, false, {}, "constant"); }
  Var parameter(Tensor v) { return push(std::move(v), {}, true, {}, "parameter"); }

  /// Appends an op result. `backward` is kept only if some input requires a gradient.
  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward, const char* op) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_.at(i).requires_grad;
    return push(std::move(value), std::move(inputs), needs, needs ? std::move(backward) : Backward{}, op);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() loss with respect to `v`; zeros when unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.size() ? n.grad : Tensor(n.value.rows(), n.value.cols());
  }

  /// Gradient accumulator for an input, or nullptr if it needs none.
  Tensor* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows(), n.value.cols());
    return &n.grad;
  }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("loss belongs to another tape");
    if (backward_done_) throw std::logic_error("backward() already ran on this tape; call reset() first");
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw std::invalid_argument("backward() needs a scalar loss, got " + shape_str(lv));
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Tensor::scalar(1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, id);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  Var push(Tensor v, std::vector<std::size_t> inputs, bool rg, Backward bw, const char* op) {
    if (!v.all_finite()) throw NumericalError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(v), Tensor(), rg, std::move(inputs), std::move(bw)});
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (!a.tape || a.tape != b.tape) throw std::invalid_argument("vars belong to different tapes");
  return *a.tape;
}

/// Output shape of 2-D broadcasting; each dim must match or be 1.
inline std::pair<std::size_t, std::size_t> broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

inline double bget(const Tensor& t, std::size_t r, std::size_t c) {
  return t(t.rows() == 1 ? 0 : r, t.cols() == 1 ? 0 : c);
}

inline void badd(Tensor& g, std::size_t r, std::size_t c, double v) {
  g(g.rows() == 1 ? 0 : r, g.cols() == 1 ? 0 : c) += v;
}

/// Elementwise binary op with broadcasting. `da`/`db` return local partials.
template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const auto [rows, cols] = broadcast_shape(x, y, op);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = f(bget(x, r, c), bget(y, r, c));
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(
      std::move(out), {ia, ib},
      [ia, ib, da, db](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(ib);
        Tensor* gx = t.grad_slot(ia);
        Tensor* gy = t.grad_slot(ib);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) {
            const double u = bget(x, r, c), v = bget(y, r, c), go = g(r, c);
            if (gx) badd(*gx, r, c, go * da(u, v));
            if (gy) badd(*gy, r, c, go * db(u, v));
          }
      },
      op);
}

/// Elementwise unary op. `d(x, y)` is the local derivative given input x and output y.
template <class F, class D>
Var unary(Var a, const char* op, F f, D d) {
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, d](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& x = t.value(ia);
        const Tensor& y = t.value(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * d(x[i], y[i]);
      },
      op);
}

inline void check_group(const Tensor& t, std::size_t group, const char* op) {
  if (group == 0 || t.rows() % group != 0)
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(t.rows()) + " rows not divisible by group " +
                                std::to_string(group));
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var div(Var a, Var b) {
  for (double v : b.value().values())
    if (v == 0.0) throw NumericalError("div: division by zero");
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Var scale(Var a, double k) {
  return detail::unary(
      a, "scale", [k](double x) { return k * x; }, [k](double, double) { return k; });
}

inline Var add_scalar(Var a, double k) {
  return detail::unary(
      a, "add_scalar", [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var relu(Var a) {
  // Subgradient 0 at the kink.
  return detail::unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var abs(Var a) {
  return detail::unary(
      a, "abs", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var exp(Var a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw NumericalError("log of non-positive value");
  return detail::unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(Var a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw NumericalError("sqrt of non-positive value");
  return detail::unary(
      a, "sqrt", [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, "sigmoid",
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline double softplus_value(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline Var softplus(Var a) {
  return detail::unary(
      a, "softplus", softplus_value,
      [](double x, double) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) throw std::invalid_argument("matmul: shape mismatch " + shape_str(x) + " @ " + shape_str(y));
  Tensor out(x.rows(), y.cols());
  out.map().noalias() = x.map() * y.map();
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(
      std::move(out), {ia, ib},
      [ia, ib](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        if (Tensor* gx = t.grad_slot(ia)) gx->map().noalias() += g.map() * t.value(ib).map().transpose();
        if (Tensor* gy = t.grad_slot(ib)) gy->map().noalias() += t.value(ia).map().transpose() * g.map();
      },
      "matmul");
}

inline Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record(
      Tensor::scalar(s), {ia},
      [ia](Tape& t, std::size_t self) {
        const double g = t.out_grad(self)[0];
        Tensor* gx = t.grad_slot(ia);
        for (double& v : gx->values()) v += g;
      },
      "sum");
}

inline Var mean(Var a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Zero-variance guard inside the square root of std().
inline constexpr double kStdEpsilon = 1e-12;

/// Sample standard deviation (n - 1 divisor) over all entries, sqrt(var + 1e-12).
inline Var stddev(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("stddev needs at least two entries");
  double m = 0.0;
  for (double v : x.values()) m += v;
  m /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : x.values()) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1) + kStdEpsilon);
  const std::size_t ia = a.id;
  return a.tape->record(
      Tensor::scalar(sd), {ia},
      [ia, m, n](Tape& t, std::size_t self) {
        const double g = t.out_grad(self)[0];
        const double sd = t.value(self)[0];
        const Tensor& x = t.value(ia);
        Tensor* gx = t.grad_slot(ia);
        const double k = g / (sd * static_cast<double>(n - 1));
        for (std::size_t i = 0; i < n; ++i) (*gx)[i] += k * (x[i] - m);
      },
      "std");
}

/// Softmax over consecutive row groups of a column vector.
inline Var group_softmax(Var a, std::size_t group) {
  const Tensor& x = a.value();
  if (x.cols() != 1) throw std::invalid_argument("group_softmax expects a column vector, got " + shape_str(x));
  detail::check_group(x, group, "group_softmax");
  Tensor out(x.rows(), 1);
  for (std::size_t g0 = 0; g0 < x.rows(); g0 += group) {
    double mx = x[g0];
    for (std::size_t i = 1; i < group; ++i) mx = std::max(mx, x[g0 + i]);
    double z = 0.0;
    for (std::size_t i = 0; i < group; ++i) z += (out[g0 + i] = std::exp(x[g0 + i] - mx));
    for (std::size_t i = 0; i < group; ++i) out[g0 + i] /= z;
  }
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, group](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& y = t.value(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t g0 = 0; g0 < y.rows(); g0 += group) {
          double dot = 0.0;
          for (std::size_t i = 0; i < group; ++i) dot += g[g0 + i] * y[g0 + i];
          for (std::size_t i = 0; i < group; ++i) (*gx)[g0 + i] += y[g0 + i] * (g[g0 + i] - dot);
        }
      },
      "softmax");
}

inline Var softmax(Var a) {
  const Tensor& x = a.value();
  if (x.cols() != 1 && x.rows() != 1) throw std::invalid_argument("softmax expects a vector, got " + shape_str(x));
  if (x.cols() == 1) return group_softmax(a, x.rows());
  // Row vector: same math, column layout restored afterwards.
  const std::size_t ia = a.id, n = x.cols();
  Tensor col(n, 1, x.values());
  Var c = a.tape->record(
      std::move(col), {ia},
      [ia](Tape& t, std::size_t self) {
        Tensor* gx = t.grad_slot(ia);
        const Tensor& g = t.out_grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      },
      "reshape");
  Var s = group_softmax(c, n);
  const std::size_t is = s.id;
  Tensor row(1, n, s.value().values());
  return a.tape->record(
      std::move(row), {is},
      [is](Tape& t, std::size_t self) {
        Tensor* gx = t.grad_slot(is);
        const Tensor& g = t.out_grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      },
      "reshape");
}

inline Var slice_rows(Var a, std::size_t first, std::size_t count) {
  const Tensor& x = a.value();
  if (first + count > x.rows()) throw std::invalid_argument("slice_rows out of range for " + shape_str(x));
  const std::size_t cols = x.cols();
  Tensor out(count, cols,
             std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(first * cols),
                                 x.values().begin() + static_cast<std::ptrdiff_t>((first + count) * cols)));
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, first, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[first * cols + i] += g[i];
      },
      "slice_rows");
}

inline Var slice_cols(Var a, std::size_t first, std::size_t count) {
  const Tensor& x = a.value();
  if (first + count > x.cols()) throw std::invalid_argument("slice_cols out of range for " + shape_str(x));
  Tensor out(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = x(r, first + c);
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, first](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(r, first + c) += g(r, c);
      },
      "slice_cols");
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  Tape& tape = *parts[0].tape;
  const std::size_t cols = parts[0].cols();
  std::vector<double> values;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape != &tape) throw std::invalid_argument("vars belong to different tapes");
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    values.insert(values.end(), p.value().values().begin(), p.value().values().end());
    ids.push_back(p.id);
  }
  const std::size_t rows = values.size() / std::max<std::size_t>(cols, 1);
  return tape.record(
      Tensor(rows, cols, std::move(values)), ids,
      [ids](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        std::size_t off = 0;
        for (std::size_t id : ids) {
          const std::size_t n = t.value(id).size();
          if (Tensor* gx = t.grad_slot(id))
            for (std::size_t i = 0; i < n; ++i) (*gx)[i] += g[off + i];
          off += n;
        }
      },
      "concat_rows");
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  Tape& tape = *parts[0].tape;
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape != &tape) throw std::invalid_argument("vars belong to different tapes");
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& x = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, off + c) = x(r, c);
    off += x.cols();
  }
  return tape.record(
      std::move(out), ids,
      [ids](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        std::size_t off = 0;
        for (std::size_t id : ids) {
          const std::size_t w = t.value(id).cols();
          if (Tensor* gx = t.grad_slot(id))
            for (std::size_t r = 0; r < g.rows(); ++r)
              for (std::size_t c = 0; c < w; ++c) (*gx)(r, c) += g(r, off + c);
          off += w;
        }
      },
      "concat_cols");
}

/// Sums each group of consecutive rows: (G*n) x c -> G x c.
inline Var group_sum(Var a, std::size_t group) {
  const Tensor& x = a.value();
  detail::check_group(x, group, "group_sum");
  const std::size_t groups = x.rows() / group, cols = x.cols();
  Tensor out(groups, cols);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r / group, c) += x(r, c);
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, group](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t r = 0; r < gx->rows(); ++r)
          for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += g(r / group, c);
      },
      "group_sum");
}

/// Repeats every row `times` times: G x c -> (G*times) x c.
inline Var repeat_rows(Var a, std::size_t times) {
  const Tensor& x = a.value();
  Tensor out(x.rows() * times, x.cols());
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r / times, c);
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, times](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(r / times, c) += g(r, c);
      },
      "repeat_rows");
}

/// Block-diagonal product: row g*n+i of the result is sum_k m(g*n+i, k) * h(g*n+k, :).
/// `m` stacks G square n x n blocks; `h` stacks G blocks of n rows.
inline Var group_matmul(Var m, Var h) {
  Tape& tape = detail::same_tape(m, h);
  const Tensor& mv = m.value();
  const Tensor& hv = h.value();
  const std::size_t n = mv.cols();
  if (mv.rows() != hv.rows()) throw std::invalid_argument("group_matmul: row mismatch " + shape_str(mv) + " vs " + shape_str(hv));
  detail::check_group(mv, n, "group_matmul");
  const std::size_t d = hv.cols();
  Tensor out(hv.rows(), d);
  for (std::size_t g0 = 0; g0 < mv.rows(); g0 += n) {
    const auto mb = mv.map().middleRows(static_cast<Eigen::Index>(g0), static_cast<Eigen::Index>(n));
    const auto hb = hv.map().middleRows(static_cast<Eigen::Index>(g0), static_cast<Eigen::Index>(n));
    out.map().middleRows(static_cast<Eigen::Index>(g0), static_cast<Eigen::Index>(n)).noalias() = mb * hb;
  }
  const std::size_t im = m.id, ih = h.id;
  return tape.record(
      std::move(out), {im, ih},
      [im, ih, n](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& mv = t.value(im);
        const Tensor& hv = t.value(ih);
        Tensor* gm = t.grad_slot(im);
        Tensor* gh = t.grad_slot(ih);
        const auto en = static_cast<Eigen::Index>(n);
        for (std::size_t g0 = 0; g0 < mv.rows(); g0 += n) {
          const auto r0 = static_cast<Eigen::Index>(g0);
          const auto gb = g.map().middleRows(r0, en);
          if (gm) gm->map().middleRows(r0, en).noalias() += gb * hv.map().middleRows(r0, en).transpose();
          if (gh) gh->map().middleRows(r0, en).noalias() += mv.map().middleRows(r0, en).transpose() * gb;
        }
      },
      "group_matmul");
}

/// For each group of n entries of a column vector: x_i - x_j for every ordered pair,
/// laid out (g, i, j) row-major, giving (G*n*n) x 1.
inline Var pairwise_diff(Var a, std::size_t group) {
  const Tensor& x = a.value();
  if (x.cols() != 1) throw std::invalid_argument("pairwise_diff expects a column vector");
  detail::check_group(x, group, "pairwise_diff");
  const std::size_t groups = x.rows() / group;
  Tensor out(groups * group * group, 1);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < group; ++i)
      for (std::size_t j = 0; j < group; ++j) out[(g * group + i) * group + j] = x[g * group + i] - x[g * group + j];
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, group, groups](Tape& t, std::size_t self) {
        const Tensor& go = t.out_grad(self);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t g = 0; g < groups; ++g)
          for (std::size_t i = 0; i < group; ++i)
            for (std::size_t j = 0; j < group; ++j) {
              const double v = go[(g * group + i) * group + j];
              (*gx)[g * group + i] += v;
              (*gx)[g * group + j] -= v;
            }
      },
      "pairwise_diff");
}

/// Euclidean norm of each group of consecutive entries of a column vector: G x 1.
/// Subgradient 0 at the origin.
inline Var group_l2norm(Var a, std::size_t group) {
  const Tensor& x = a.value();
  if (x.cols() != 1) throw std::invalid_argument("group_l2norm expects a column vector");
  detail::check_group(x, group, "group_l2norm");
  Tensor out(x.rows() / group, 1);
  for (std::size_t r = 0; r < x.rows(); ++r) out[r / group] += x[r] * x[r];
  for (double& v : out.values()) v = std::sqrt(v);
  const std::size_t ia = a.id;
  return a.tape->record(
      std::move(out), {ia},
      [ia, group](Tape& t, std::size_t self) {
        const Tensor& g = t.out_grad(self);
        const Tensor& y = t.value(self);
        const Tensor& x = t.value(ia);
        Tensor* gx = t.grad_slot(ia);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const double nrm = y[r / group];
          if (nrm > 0.0) (*gx)[r] += g[r / group] * x[r] / nrm;
        }
      },
      "group_l2norm");
}

}  // namespace folio::ad
