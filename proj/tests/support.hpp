#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "folio/autodiff.hpp"

namespace testing_support {

inline Eigen::MatrixXd random_psd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = z(rng);
  Eigen::MatrixXd s = a * a.transpose() / n;
  return 0.5 * (s + s.transpose());
}

/// Uniform draw from the simplex.
inline Eigen::VectorXd random_simplex(std::mt19937_64& rng, int n) {
  std::exponential_distribution<double> e(1.0);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) b(i) = e(rng);
  return b / b.sum();
}

inline folio::ad::Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0,
                                       double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  folio::ad::Tensor t(r, c);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

using ScalarFn = std::function<folio::ad::Var(folio::ad::Tape&, const std::vector<folio::ad::Var>&)>;

/// ||analytic - numeric|| / (||analytic|| + ||numeric||) over all inputs, central differences.
inline double gradient_error(const ScalarFn& f, const std::vector<folio::ad::Tensor>& inputs, double h = 1e-6) {
  using namespace folio::ad;
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  tape.backward(f(tape, vars));
  std::vector<Tensor> analytic;
  for (const auto& v : vars) analytic.push_back(tape.grad(v));

  auto eval = [&](const std::vector<Tensor>& in) {
    Tape t2;
    std::vector<Var> v2;
    for (const auto& t : in) v2.push_back(t2.parameter(t));
    return f(t2, v2).item();
  };
  double diff = 0.0, na = 0.0, nn = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = work[k][i];
      work[k][i] = x0 + h;
      const double up = eval(work);
      work[k][i] = x0 - h;
      const double down = eval(work);
      work[k][i] = x0;
      const double num = (up - down) / (2.0 * h);
      diff += (num - analytic[k][i]) * (num - analytic[k][i]);
      na += analytic[k][i] * analytic[k][i];
      nn += num * num;
    }
  const double den = std::sqrt(na) + std::sqrt(nn);
  return den < 1e-14 ? std::sqrt(diff) : std::sqrt(diff) / den;
}

/// Reduces any tensor-valued op to a scalar with fixed random weights.
inline folio::ad::Var weighted_sum(folio::ad::Tape& tape, folio::ad::Var x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return folio::ad::sum(folio::ad::mul(x, tape.constant(random_tensor(rng, x.rows(), x.cols()))));
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("folio-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing_support
