#include "flowinv/fields.hpp"
#include "flowinv/numerics.hpp"
#include "flowinv/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flowinv;

namespace {

MatrixXd row(std::initializer_list<double> v) {
  MatrixXd m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index j = 0;
  for (double x : v) m(0, j++) = x;
  return m;
}

// E[x1 - x0 | x_sigma in a narrow window around x], scalar case, by rejection.
struct McEstimate {
  double mean;
  double stderr_;
};

McEstimate conditional_velocity_mc(double mu, double s, double sigma, double x, std::uint64_t seed) {
  RngStream rng(seed);
  const double window = 0.01;
  double sum = 0.0, sum_sq = 0.0;
  long n = 0;
  for (int i = 0; i < 1000000; ++i) {
    const double x0 = rng.gaussian();
    const double x1 = mu + s * rng.gaussian();
    const double xt = sigma * x1 + (1.0 - sigma) * x0;
    if (std::abs(xt - x) > window) continue;
    const double u = x1 - x0;
    sum += u;
    sum_sq += u * u;
    ++n;
  }
  const double m = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - m * m;
  return {m, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace

TEST(AnalyticGaussian, NoiseEndIsMuMinusX) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const MatrixXd x = row({0.3, -1.0});
  const MatrixXd v = f.velocity(x, 0.0, nullptr);
  EXPECT_NEAR(v(0, 0), 2.0 - 0.3, 1e-15);
  EXPECT_NEAR(v(0, 1), 2.0 + 1.0, 1e-15);
}

TEST(AnalyticGaussian, DataEndIsX) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const MatrixXd x = row({0.3, -1.0});
  EXPECT_LE((f.velocity(x, 1.0, nullptr) - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(AnalyticGaussian, MatchesMonteCarloConditionalExpectation) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(1, 2.0), 0.5);
  for (double x : {1.0, 1.5}) {
    const McEstimate mc = conditional_velocity_mc(2.0, 0.5, 0.5, x, 42);
    const double analytic = f.velocity(row({x}), 0.5, nullptr)(0, 0);
    EXPECT_LE(std::abs(analytic - mc.mean), 3.0 * mc.stderr_) << "x=" << x << " mc=" << mc.mean;
  }
}

TEST(AnalyticGaussian, StandardCaseSymmetry) {
  AnalyticGaussianFlow<double> f(VectorXd::Zero(3), 1.0);
  RngStream rng(2);
  const MatrixXd x = gaussian_sample(rng, 5, 3);
  EXPECT_LE(f.velocity(x, 0.5, nullptr).cwiseAbs().maxCoeff(), 1e-15);
  const double sigma = 0.3;
  const double c = (2 * sigma - 1) / (sigma * sigma + (1 - sigma) * (1 - sigma));
  EXPECT_LE((f.velocity(x, sigma, nullptr) - c * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LinearField, Examples) {
  const std::vector<double> nodes{0.0, 1.0};
  Eigen::Matrix2d rot;
  rot << 0, 1, -1, 0;
  VectorXd c(2);
  c << 0.7, -0.2;
  const auto constant = LinearField<double>::constant(nodes, MatrixXd::Zero(2, 2), c);
  EXPECT_EQ(constant.velocity(row({5, 6}), 0.4, nullptr), c.transpose());
  const auto identity = LinearField<double>::constant(nodes, MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  EXPECT_EQ(identity.velocity(row({1, 2}), 0.0, nullptr), row({1, 2}));
  const auto rotation = LinearField<double>::constant(nodes, rot, VectorXd::Zero(2));
  EXPECT_EQ(rotation.velocity(row({1, 0}), 1.0, nullptr), row({0, -1}));
}

TEST(LinearField, MissingOrBadCoefficients) {
  const auto f = LinearField<double>::constant({0.2, 0.8}, MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  EXPECT_THROW(f.velocity(row({1, 2}), 0.9, nullptr), ConfigError);
  MatrixXd bad = MatrixXd::Identity(2, 2);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(LinearField<double>::constant({0.0, 1.0}, bad, VectorXd::Zero(2)), ConfigError);
}

TEST(ConstantCoupling, IndependentOfStateAndTime) {
  RngStream rng(3);
  const MatrixXd x0 = gaussian_sample(rng, 4, 2), x1 = gaussian_sample(rng, 4, 2);
  ConstantCouplingField<double> f(x0, x1);
  for (double s : {0.0, 0.37, 1.0}) EXPECT_EQ(f.velocity(gaussian_sample(rng, 4, 2), s, nullptr), x1 - x0);
}

TEST(MixtureScore, StandardNormalAtMeanIsZero) {
  GaussianMixtureScore<double> g(VectorXd::Ones(1), MatrixXd::Zero(1, 2), MatrixXd::Ones(1, 2), {1.0});
  EXPECT_EQ(g.mixture_score(MatrixXd::Zero(1, 2), 0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MixtureScore, SingleGaussianClosedForm) {
  // q_a = N(sqrt(a) m, I) when the data covariance is I, so
  // eps_hat = sqrt(1 - a) (x - sqrt(a) m).
  MatrixXd m(1, 2);
  m << 1.5, -0.5;
  const double a = 0.36;
  GaussianMixtureScore<double> g(VectorXd::Ones(1), m, MatrixXd::Ones(1, 2), {a});
  RngStream rng(4);
  const MatrixXd x = gaussian_sample(rng, 6, 2);
  const MatrixXd expected = std::sqrt(1 - a) * (x.rowwise() - std::sqrt(a) * m.row(0));
  EXPECT_LE((g.mixture_score(x, 0) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MixtureScore, MatchesFiniteDifferenceOfLogDensity) {
  VectorXd w(2);
  w << 0.3, 0.7;
  MatrixXd m(2, 2), v(2, 2);
  m << -2, 0.5, 2, -1;
  v << 0.25, 0.5, 0.4, 0.3;
  const double a = 0.6;
  GaussianMixtureScore<double> g(w, m, v, {a});
  MatrixXd x(1, 2);
  x << 0.4, -0.2;
  const MatrixXd eps = g.mixture_score(x, 0);
  const double h = 1e-5;
  for (Eigen::Index j = 0; j < 2; ++j) {
    MatrixXd xp = x, xm = x;
    xp(0, j) += h;
    xm(0, j) -= h;
    const double grad = (g.log_density(xp, a)(0) - g.log_density(xm, a)(0)) / (2 * h);
    EXPECT_NEAR(eps(0, j), -std::sqrt(1 - a) * grad, 1e-6);
  }
}

TEST(MixtureScore, DegenerateWeightsReduceToSingle) {
  VectorXd w(2);
  w << 1.0, 0.0;
  MatrixXd m(2, 2), v(2, 2);
  m << 1, 2, -3, 0;
  v << 0.5, 0.2, 1, 1;
  GaussianMixtureScore<double> mix(w, m, v, {0.5});
  GaussianMixtureScore<double> single(VectorXd::Ones(1), m.topRows(1), v.topRows(1), {0.5});
  RngStream rng(5);
  const MatrixXd x = gaussian_sample(rng, 8, 2);
  EXPECT_LE((mix.mixture_score(x, 0) - single.mixture_score(x, 0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MixtureScore, UnderflowIsNumericalFailure) {
  GaussianMixtureScore<double> g(VectorXd::Ones(1), MatrixXd::Zero(1, 1), MatrixXd::Constant(1, 1, 1e-3), {1.0});
  EXPECT_THROW(g.mixture_score(MatrixXd::Constant(1, 1, 1e200), 0), NumericalFailure);
}

TEST(MixtureScore, InvalidWeights) {
  VectorXd w(2);
  w << 0.5, 0.6;
  EXPECT_THROW(GaussianMixtureScore<double>(w, MatrixXd::Zero(2, 1), MatrixXd::Ones(2, 1)), InvalidArgument);
}
