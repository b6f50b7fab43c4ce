#include <gtest/gtest.h>

#include "folio/covariance.hpp"
#include "support.hpp"

using namespace folio;
using namespace testing_support;

namespace {

ReturnMatrix random_returns(std::uint64_t seed, int n, int t) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 0.01);
  ReturnMatrix r;
  r.r.resize(n, t);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < t; ++k) r.r(i, k) = z(rng) + 0.002 * i;
  return r;
}

double brute_cov(const Eigen::MatrixXd& r, int i, int j, int first, int w) {
  double mi = 0, mj = 0;
  for (int k = first; k < first + w; ++k) {
    mi += r(i, k);
    mj += r(j, k);
  }
  mi /= w;
  mj /= w;
  double s = 0;
  for (int k = first; k < first + w; ++k) s += (r(i, k) - mi) * (r(j, k) - mj);
  return s / (w - 1);
}

}  // namespace

TEST(Covariance, MatchesBruteForceOnTrailingWindow) {
  const ReturnMatrix r = random_returns(1, 4, 60);
  const CovarianceSeries cs = rolling_covariance(r, 20, 0.0);
  EXPECT_EQ(cs.first, 20u);
  EXPECT_FALSE(cs.has(19));
  EXPECT_TRUE(cs.has(60));
  EXPECT_FALSE(cs.has(61));
  for (std::size_t t : {20u, 35u, 60u})
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        EXPECT_NEAR(cs.at(t)(i, j), brute_cov(r.r, i, j, static_cast<int>(t) - 20, 20), 1e-15);
}

TEST(Covariance, IsSymmetricPsdWithRidge) {
  const ReturnMatrix r = random_returns(2, 6, 40);
  const CovarianceSeries cs = rolling_covariance(r, 5, 1e-6);
  for (const auto& s : cs.sigma) {
    EXPECT_EQ((s - s.transpose()).cwiseAbs().maxCoeff(), 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    EXPECT_GE(es.eigenvalues().minCoeff(), 1e-6 * 0.999);
  }
}

TEST(Covariance, ConstantReturnsGiveExactlyTheRidge) {
  ReturnMatrix r;
  r.r = Eigen::MatrixXd::Constant(3, 30, 0.0123);
  const CovarianceSeries cs = rolling_covariance(r, 10, 1e-8);
  EXPECT_EQ((cs.at(15) - 1e-8 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Covariance, RejectsBadParameters) {
  const ReturnMatrix r = random_returns(3, 2, 10);
  EXPECT_THROW(rolling_covariance(r, 1), ConfigError);
  EXPECT_THROW(rolling_covariance(r, 5, -1.0), ConfigError);
  EXPECT_THROW(rolling_covariance(r, 5).at(2), DataError);
}

TEST(Covariance, PortfolioRiskAndCorrelation) {
  Eigen::MatrixXd s(2, 2);
  s << 0.04, 0.006, 0.006, 0.09;
  EXPECT_NEAR(portfolio_risk(Eigen::Vector2d(0.5, 0.5), s), 0.25 * (0.04 + 0.012 + 0.09), 1e-15);
  EXPECT_THROW(portfolio_risk(Eigen::Vector3d(1, 0, 0), s), DataError);
  const Eigen::MatrixXd c = correlation_from_covariance(s);
  EXPECT_DOUBLE_EQ(c(0, 0), 1.0);
  EXPECT_NEAR(c(0, 1), 0.006 / (0.2 * 0.3), 1e-15);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(2, 2);
  EXPECT_EQ(correlation_from_covariance(z), Eigen::MatrixXd::Identity(2, 2));
}
