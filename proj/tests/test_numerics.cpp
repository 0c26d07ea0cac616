#include "flowinv/numerics.hpp"
#include "flowinv/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flowinv;

TEST(GaussianSample, SameSeedSameDraws) {
  RngStream a(7), b(7);
  EXPECT_EQ(gaussian_sample(a, 1, 2), gaussian_sample(b, 1, 2));
}

TEST(GaussianSample, MomentsConverge) {
  RngStream rng(11);
  const MatrixXd x = gaussian_sample(rng, 100000, 1);
  const double m = x.mean();
  const double var = (x.array() - m).square().sum() / static_cast<double>(x.size() - 1);
  EXPECT_LT(std::abs(m), 0.02);
  EXPECT_LT(std::abs(var - 1.0), 0.02);
}

TEST(GaussianSample, RejectsEmptyShape) {
  RngStream rng(1);
  EXPECT_THROW(gaussian_sample(rng, 0, 3), InvalidArgument);
  EXPECT_THROW(gaussian_sample(rng, 3, 0), InvalidArgument);
}

TEST(RngStream, SplitSubstreamsUncorrelated) {
  RngStream root(3);
  RngStream s1 = root.split();
  RngStream s2 = root.split();
  const int n = 10000;
  const MatrixXd a = gaussian_sample(s1, n, 1);
  const MatrixXd b = gaussian_sample(s2, n, 1);
  const double ma = a.mean(), mb = b.mean();
  const double cov = ((a.array() - ma) * (b.array() - mb)).sum();
  const double corr = cov / std::sqrt((a.array() - ma).square().sum() * (b.array() - mb).square().sum());
  EXPECT_LT(std::abs(corr), 0.05);
}

TEST(RngStream, SplitDoesNotDisturbParent) {
  RngStream a(5), b(5);
  (void)a.split();
  EXPECT_EQ(a.next_bits(), b.next_bits());
}

TEST(RngStream, UniformRange) {
  RngStream rng(9);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(3), 3u);
  }
}

TEST(FiniteDiff, QuadraticExact) {
  VectorXd p(4);
  p << 0.3, -1.2, 2.5, 0.01;
  auto loss = [](const VectorXd& q) { return q.squaredNorm(); };
  const auto r = finite_diff_check(loss, 2.0 * p, p, 1e-3);
  EXPECT_LE(r.max_relative_error, 1e-9);
  ASSERT_EQ(r.relative_errors.size(), 4u);
}

TEST(FiniteDiff, WrongGradientReportsHalf) {
  VectorXd p(3);
  p << 1.0, -2.0, 0.5;
  auto loss = [](const VectorXd& q) { return q.squaredNorm(); };
  const auto r = finite_diff_check(loss, 4.0 * p, p, 1e-3);
  // |2g - g| / max(2g, g) = 1/2
  EXPECT_NEAR(r.max_relative_error, 0.5, 1e-9);
}

TEST(FiniteDiff, MaxIsMaximumOfList) {
  VectorXd p(3);
  p << 1.0, 2.0, 3.0;
  auto loss = [](const VectorXd& q) { return std::sin(q(0)) + q(1) * q(2); };
  VectorXd g(3);
  g << std::cos(1.0), 3.0, 2.5;  // last entry wrong
  const auto r = finite_diff_check(loss, g, p, 1e-3);
  double mx = 0.0;
  for (double e : r.relative_errors) mx = std::max(mx, e);
  EXPECT_EQ(r.max_relative_error, mx);
  EXPECT_EQ(r.worst_parameter_index, 2);
}

TEST(FiniteDiff, NonFiniteLossNamesCoordinate) {
  VectorXd p = VectorXd::Ones(3);
  auto loss = [](const VectorXd& q) { return q(1) > 1.0 ? std::nan("") : 0.0; };
  try {
    finite_diff_check(loss, VectorXd::Zero(3), p, 1e-3);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos);
  }
}

TEST(EnergyDistance, IdenticalSetsZero) {
  RngStream rng(1);
  const MatrixXd a = gaussian_sample(rng, 200, 2);
  EXPECT_NEAR(energy_distance(a, a), 0.0, 1e-12);
}

TEST(EnergyDistance, SameDistributionSmall) {
  RngStream r1(1), r2(2);
  EXPECT_LE(energy_distance(gaussian_sample(r1, 500, 1), gaussian_sample(r2, 500, 1)), 0.05);
}

TEST(EnergyDistance, ShiftedDistributionMatchesBruteForce) {
  RngStream r1(1), r2(2);
  const MatrixXd a = gaussian_sample(r1, 300, 1);
  const MatrixXd b = (gaussian_sample(r2, 300, 1).array() + 5.0).matrix();
  // Independent brute-force pairwise computation.
  auto mean_dist = [](const MatrixXd& x, const MatrixXd& y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < y.rows(); ++j) s += (x.row(i) - y.row(j)).norm();
    return s / static_cast<double>(x.rows() * y.rows());
  };
  const double brute = 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
  const double ed = energy_distance(a, b);
  EXPECT_GE(ed, 1.0);
  EXPECT_NEAR(ed, brute, 1e-9);
}

TEST(EnergyDistance, SymmetricExactly) {
  RngStream r1(4), r2(5);
  const MatrixXd a = gaussian_sample(r1, 123, 3);
  const MatrixXd b = gaussian_sample(r2, 77, 3);
  EXPECT_EQ(energy_distance(a, b), energy_distance(b, a));
}

TEST(EnergyDistance, DimensionMismatch) {
  RngStream rng(1);
  EXPECT_THROW(energy_distance(gaussian_sample(rng, 5, 2), gaussian_sample(rng, 5, 3)), InvalidArgument);
}

TEST(Stats, MedianAndSpearman) {
  EXPECT_EQ(median(std::vector<double>{3, 1, 2}), 2.0);
  EXPECT_EQ(median(std::vector<double>{4, 1, 2, 3}), 2.5);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {10, 20, 25, 100}), 1.0);
  EXPECT_DOUBLE_EQ(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
}
