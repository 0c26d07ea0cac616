#include "flowinv/inversion.hpp"
#include "flowinv/numerics.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flowinv;

namespace {

FixedPointConfig fp(int iterations, Aggregation agg = Aggregation::average) {
  FixedPointConfig c;
  c.iterations = iterations;
  c.aggregation = agg;
  return c;
}

// Symmetric PSD A scaled so that max step * ||A||_2 = q.
LinearField<double> contraction_field(const TimeGrid& grid, double q, RngStream& rng, Eigen::Index d = 3) {
  const MatrixXd g = gaussian_sample(rng, d, d);
  const MatrixXd a = g * g.transpose();
  double max_delta = 0.0;
  for (std::size_t t = 0; t < grid.steps(); ++t) max_delta = std::max(max_delta, grid.delta(t));
  const double top = Eigen::SelfAdjointEigenSolver<MatrixXd>(a).eigenvalues().maxCoeff();
  return LinearField<double>::constant(grid.sigmas(), a * (q / (max_delta * top)), gaussian_vector(rng, d));
}

struct SeedSweep {
  std::vector<std::vector<RoundTripRow>> rows;  // per seed, per config
  std::vector<double> column(std::size_t c, double RoundTripRow::*field) const {
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c].*field);
    return out;
  }
};

SeedSweep analytic_sweep(const std::vector<FixedPointConfig>& configs) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream root(1);
  SeedSweep sweep;
  for (int k = 0; k < 64; ++k) {
    RngStream r = root.split();
    const MatrixXd x1 = sample_ode<double>(f, gaussian_sample(r, 1, 2), grid).states.back();
    sweep.rows.push_back(round_trip_report<double>(f, x1, grid, {}, configs));
  }
  return sweep;
}

}  // namespace

TEST(NaiveInvert, ConstantFieldExactInverse) {
  RngStream rng(1);
  const MatrixXd x0 = gaussian_sample(rng, 3, 2), x1 = gaussian_sample(rng, 3, 2);
  ConstantCouplingField<double> f(x0, x1);
  const TimeGrid grid = TimeGrid::uniform(10);
  const MatrixXd x = gaussian_sample(rng, 3, 2);
  const MatrixXd next = euler_step<double>(f, x, 4, grid);
  EXPECT_LE((naive_invert_step<double>(f, next, 4, grid) - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(NaiveInvert, SecondOrderGapToExactInverse) {
  RngStream rng(2);
  Eigen::Matrix2d a;
  a << 0.3, -1.0, 0.8, 0.2;
  VectorXd b(2);
  b << 0.5, -0.25;
  MatrixXd x_next(1, 2);
  x_next << 1.0, -0.7;
  auto gap = [&](std::size_t T) {
    const TimeGrid grid = TimeGrid::uniform(T);
    const auto f = LinearField<double>::constant(grid.sigmas(), a, b);
    return (naive_invert_step<double>(f, x_next, 0, grid) - exact_linear_invert_step<double>(f, x_next, 0, grid)).norm();
  };
  const double g10 = gap(10), g20 = gap(20);
  EXPECT_GT(g10, 0.0);
  // O(dsigma^2): halving the step divides the gap by about 4.
  EXPECT_NEAR(g10 / g20, 4.0, 0.3);
  const double v = ((x_next * a.transpose()).rowwise() + b.transpose()).norm();
  EXPECT_LE(g10, 2.0 * 0.01 * a.norm() * v);
}

TEST(NaiveInvert, AnalyticRoundTripMismatchPositive) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(3);
  const MatrixXd x1 = sample_ode<double>(f, gaussian_sample(rng, 8, 2), grid).states.back();
  const auto inv = invert<double>(f, x1, grid, {}, fp(0));
  const MatrixXd back = regenerate<double>(f, inv, {}, false).states.back();
  EXPECT_GT((back - x1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FixedPoint, ZeroIterationsIsNaiveBitwise) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(4);
  const MatrixXd x = gaussian_sample(rng, 5, 2);
  for (Aggregation agg : {Aggregation::average, Aggregation::last})
    EXPECT_EQ(fixed_point_invert_step<double>(f, x, 12, grid, {}, fp(0, agg)).first,
              naive_invert_step<double>(f, x, 12, grid));
}

TEST(FixedPoint, ConstantFieldAllIteratesCoincide) {
  RngStream rng(5);
  ConstantCouplingField<double> f(gaussian_sample(rng, 2, 2), gaussian_sample(rng, 2, 2));
  const TimeGrid grid = TimeGrid::uniform(10);
  const MatrixXd x = gaussian_sample(rng, 2, 2);
  const MatrixXd naive = naive_invert_step<double>(f, x, 3, grid);
  for (int I : {1, 3, 7}) EXPECT_LE((fixed_point_invert_step<double>(f, x, 3, grid, {}, fp(I)).first - naive).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(FixedPoint, ConvergesToExactLinearInverse) {
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(6);
  const auto f = contraction_field(grid, 0.5, rng);
  const MatrixXd x = gaussian_sample(rng, 4, 3);
  const MatrixXd got = fixed_point_invert_step<double>(f, x, 10, grid, {}, fp(20, Aggregation::last)).first;
  const MatrixXd exact = exact_linear_invert_step<double>(f, x, 10, grid);
  // Each iterate contracts the error by at most q in the 2-norm, starting from x^0 = x.
  EXPECT_LE((got - exact).norm(), std::pow(0.5, 20) * (x - exact).norm() * (1 + 1e-9));
  EXPECT_LE((got - exact).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FixedPoint, ContractionRateBound) {
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(7);
  const double q = 0.5;
  const auto f = contraction_field(grid, q, rng);
  const auto [x, diag] = fixed_point_invert_step<double>(f, gaussian_sample(rng, 4, 3), 5, grid, {}, fp(12, Aggregation::last));
  ASSERT_EQ(diag.iterate_distances.size(), 12u);
  for (std::size_t i = 1; i < diag.iterate_distances.size(); ++i) {
    if (diag.iterate_distances[i - 1] < 1e-13) break;
    EXPECT_LE(diag.iterate_distances[i], (q + 0.05) * diag.iterate_distances[i - 1]) << "i=" << i;
  }
}

TEST(FixedPoint, AverageOfLatentsEqualsAveragedVelocity) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(8);
  const MatrixXd x_next = gaussian_sample(rng, 3, 2);
  const std::size_t t = 17;
  const double d = grid.sigma(t) - grid.sigma(t + 1);
  // Iterates by hand; the mean latent equals one step with the mean velocity.
  MatrixXd cur = x_next, vsum = MatrixXd::Zero(3, 2);
  for (int i = 0; i < 3; ++i) {
    const MatrixXd v = f.velocity(cur, grid.sigma(t), nullptr);
    vsum += v;
    cur = x_next + d * v;
  }
  const MatrixXd by_velocity = x_next + d * (vsum / 3.0);
  EXPECT_LE((fixed_point_invert_step<double>(f, x_next, t, grid, {}, fp(3)).first - by_velocity).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FixedPoint, DivergenceGuardNamesStepAndIteration) {
  const TimeGrid grid = TimeGrid::uniform(10);
  const auto f = LinearField<double>::constant(grid.sigmas(), MatrixXd::Identity(2, 2) * 500.0, VectorXd::Zero(2));
  try {
    fixed_point_invert_step<double>(f, MatrixXd::Ones(1, 2), 3, grid, {}, fp(50));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("t=3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("i="), std::string::npos) << msg;
  }
}

TEST(ExactLinear, Examples) {
  const TimeGrid grid = TimeGrid::uniform(4);
  VectorXd b(2);
  b << 1.0, -2.0;
  MatrixXd x_next(1, 2);
  x_next << 0.5, 0.25;
  const auto zero_a = LinearField<double>::constant(grid.sigmas(), MatrixXd::Zero(2, 2), b);
  EXPECT_LE((exact_linear_invert_step<double>(zero_a, x_next, 1, grid) - (x_next - 0.25 * b.transpose())).cwiseAbs().maxCoeff(), 1e-15);

  // Rotation generator, d = 0.25: (I + d A) x = x_next, A = [[0, 1], [-1, 0]],
  // inverse 1/(1 + d^2) [[1, -d], [d, 1]].
  Eigen::Matrix2d rot;
  rot << 0, 1, -1, 0;
  const auto rf = LinearField<double>::constant(grid.sigmas(), rot, VectorXd::Zero(2));
  const double d = 0.25, den = 1 + d * d;
  MatrixXd hand(1, 2);
  hand << (x_next(0, 0) - d * x_next(0, 1)) / den, (d * x_next(0, 0) + x_next(0, 1)) / den;
  const MatrixXd got = exact_linear_invert_step<double>(rf, x_next, 2, grid);
  EXPECT_LE((got - hand).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((euler_step<double>(rf, got, 2, grid) - x_next).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ExactLinear, SingularSystem) {
  const TimeGrid grid = TimeGrid::uniform(4);
  const auto f = LinearField<double>::constant(grid.sigmas(), -4.0 * MatrixXd::Identity(2, 2), VectorXd::Zero(2));
  EXPECT_THROW(exact_linear_invert_step<double>(f, MatrixXd::Ones(1, 2), 0, grid), SingularityError);
}

TEST(Invert, ConstantCouplingRecoversX0) {
  RngStream rng(9);
  const MatrixXd x0 = gaussian_sample(rng, 4, 3), x1 = gaussian_sample(rng, 4, 3);
  ConstantCouplingField<double> f(x0, x1);
  const auto inv = invert<double>(f, x1, TimeGrid::uniform(30), {}, fp(3));
  EXPECT_LE((inv.noise() - x0).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_FALSE(inv.compensated());
}

TEST(Invert, LinearChainMatchesExactOracle) {
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(10);
  const auto f = contraction_field(grid, 0.5, rng);
  const MatrixXd x1 = gaussian_sample(rng, 8, 3);
  const auto inv = invert<double>(f, x1, grid, {}, fp(20, Aggregation::last));
  MatrixXd exact = x1;
  for (std::size_t k = grid.steps(); k-- > 0;) exact = exact_linear_invert_step<double>(f, exact, k, grid);
  EXPECT_LE((inv.noise() - exact).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Compensation, ConstantFieldNeedsNone) {
  RngStream rng(11);
  const MatrixXd x0 = gaussian_sample(rng, 4, 2), x1 = gaussian_sample(rng, 4, 2);
  ConstantCouplingField<double> f(x0, x1);
  const TimeGrid grid = TimeGrid::uniform(30);
  const auto inv = compute_compensations<double>(f, invert<double>(f, x1, grid, {}, fp(3)), {});
  for (const auto& e : inv.compensations) EXPECT_LE(e.norm(), 1e-12);
}

TEST(Compensation, CompletenessAndExactReplay) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, 2.0), 0.5);
  const TimeGrid grid = TimeGrid::uniform(30);
  RngStream rng(12);
  const MatrixXd x1 = (0.5 * gaussian_sample(rng, 16, 2)).array() + 2.0;
  const auto inv = compute_compensations<double>(f, invert<double>(f, x1, grid, {}, fp(3)), {});
  ASSERT_EQ(inv.compensations.size(), grid.steps());
  for (std::size_t t = 0; t < grid.steps(); ++t) {
    const MatrixXd& xt = inv.trajectory.states[t];
    const MatrixXd resid = inv.trajectory.states[t + 1] - (xt + grid.delta(t) * f.velocity(xt, grid.sigma(t), nullptr)) -
                           inv.compensations[t];
    EXPECT_LE(resid.cwiseAbs().maxCoeff(), 1e-12);
  }
  const MatrixXd replay = regenerate<double>(f, inv, {}, true).states.back();
  const MatrixXd plain = regenerate<double>(f, inv, {}, false).states.back();
  const double compensated = relative_linf<double>(replay, x1);
  EXPECT_LE(compensated, 1e-8);
  EXPECT_GT(relative_linf<double>(plain, x1), compensated);
}

TEST(Compensation, StateErrors) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(1, 2.0), 0.5);
  const TimeGrid grid = TimeGrid::uniform(5);
  const auto inv = invert<double>(f, MatrixXd::Ones(2, 1), grid);
  EXPECT_THROW(regenerate<double>(f, inv, {}, true), StateError);
  InversionResult<double> partial{Trajectory<double>{grid, std::vector<MatrixXd>(3), {}}, {}, {}};
  EXPECT_THROW(compute_compensations<double>(f, partial, {}), StateError);
}

TEST(RoundTrip, ConstantFieldZeroError) {
  RngStream rng(13);
  const MatrixXd x0 = gaussian_sample(rng, 3, 2), x1 = gaussian_sample(rng, 3, 2);
  ConstantCouplingField<double> f(x0, x1);
  for (const auto& row : round_trip_report<double>(f, x1, TimeGrid::uniform(30), {}, {fp(0), fp(3)})) {
    EXPECT_LE(row.mse, 1e-26);
    EXPECT_LE(row.compensated_rel_err, 1e-14);
  }
}

TEST(RoundTrip, FixedPointIterationTrend) {
  const SeedSweep sweep = analytic_sweep({fp(0), fp(1), fp(2), fp(3)});
  std::vector<double> med;
  for (std::size_t c = 0; c < 4; ++c) med.push_back(median(sweep.column(c, &RoundTripRow::mse)));
  for (std::size_t c = 1; c < 4; ++c) EXPECT_LE(med[c], med[c - 1]) << "I=" << c;
  EXPECT_LT(med[3], med[0]);
  EXPECT_LT(median(sweep.column(3, &RoundTripRow::mean_compensation_norm)),
            median(sweep.column(0, &RoundTripRow::mean_compensation_norm)));

  const double ratio = med[0] / med[3];
  const nlohmann::json pinned = flowinv::test::golden("fixed_point_ratio", {{"naive_over_I3", ratio}, {"min_ratio", 5.0}});
  EXPECT_GE(ratio, pinned.at("min_ratio").get<double>());
  EXPECT_NEAR(ratio, pinned.at("naive_over_I3").get<double>(), 1e-9);
}
