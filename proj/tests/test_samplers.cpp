#include "flowinv/fields.hpp"
#include "flowinv/numerics.hpp"
#include "flowinv/samplers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace flowinv;

namespace {

// v_c = x + tokens[0], v_u = 0.5 x.
class ToyConditional final : public VelocityField<double> {
 public:
  explicit ToyConditional(bool has_unconditional = true) : has_unconditional_(has_unconditional) {}
  MatrixXd velocity(const MatrixXd& x, double, const TokenIds* tokens) const override {
    if (tokens == nullptr) return 0.5 * x;
    return (x.array() + static_cast<double>((*tokens)[0])).matrix();
  }
  bool is_conditional() const override { return true; }
  bool supports_unconditional() const override { return has_unconditional_; }

 private:
  bool has_unconditional_;
};

class ZeroNoise final : public NoisePredictor<double> {
 public:
  MatrixXd predict_noise(const MatrixXd& x, double) const override { return MatrixXd::Zero(x.rows(), x.cols()); }
};

class NanField final : public VelocityField<double> {
 public:
  MatrixXd velocity(const MatrixXd& x, double sigma, const TokenIds*) const override {
    MatrixXd v = MatrixXd::Zero(x.rows(), x.cols());
    if (sigma > 0.5) v(0, 0) = std::numeric_limits<double>::quiet_NaN();
    return v;
  }
};

// Exact flow map of the analytic Gaussian field.
MatrixXd exact_flow(const MatrixXd& x0, double mu, double s, double sigma) {
  const double v = sigma * sigma * s * s + (1 - sigma) * (1 - sigma);
  return (std::sqrt(v) * x0).array() + sigma * mu;
}

}  // namespace

TEST(TimeGrid, UniformAndShifted) {
  const TimeGrid g = TimeGrid::uniform(30);
  EXPECT_EQ(g.steps(), 30u);
  EXPECT_EQ(g.sigma(0), 0.0);
  EXPECT_EQ(g.sigma(30), 1.0);
  const TimeGrid s = TimeGrid::shifted(30, 3.0);
  EXPECT_EQ(s.sigma(0), 0.0);
  EXPECT_EQ(s.sigma(30), 1.0);
  for (std::size_t t = 0; t < 30; ++t) EXPECT_GT(s.delta(t), 0.0);
  EXPECT_THROW(TimeGrid({0.0, 0.5, 0.5, 1.0}), InvalidArgument);
  EXPECT_THROW(TimeGrid({0.1, 1.0}), InvalidArgument);
}

TEST(EulerStep, ZeroFieldIsIdentity) {
  const auto zero = LinearField<double>::constant({0.0, 1.0}, MatrixXd::Zero(2, 2), VectorXd::Zero(2));
  RngStream rng(1);
  const MatrixXd x = gaussian_sample(rng, 3, 2);
  const TimeGrid g = TimeGrid::uniform(10);
  EXPECT_EQ(euler_step<double>(zero, x, 4, g), x);
  EXPECT_EQ(sample_ode<double>(zero, x, g).states.back(), x);
}

TEST(EulerStep, IndexOutOfRange) {
  const auto zero = LinearField<double>::constant({0.0, 1.0}, MatrixXd::Zero(1, 1), VectorXd::Zero(1));
  EXPECT_THROW(euler_step<double>(zero, MatrixXd::Zero(1, 1), 10, TimeGrid::uniform(10)), InvalidArgument);
}

TEST(SampleOde, ConstantCouplingReachesX1) {
  RngStream rng(2);
  const MatrixXd x0 = gaussian_sample(rng, 5, 3), x1 = gaussian_sample(rng, 5, 3);
  ConstantCouplingField<double> f(x0, x1);
  for (std::size_t T : {1u, 7u, 30u}) {
    const auto traj = sample_ode<double>(f, x0, TimeGrid::uniform(T));
    EXPECT_EQ(traj.states.size(), T + 1);
    EXPECT_LE((traj.states.back() - x1).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(SampleOde, AnalyticGaussianTerminalDistribution) {
  AnalyticGaussianFlow<double> f(VectorXd::Constant(1, 2.0), 0.5);
  RngStream rng(3);
  const MatrixXd z = gaussian_sample(rng, 10000, 1);
  const MatrixXd out = sample_ode<double>(f, z, TimeGrid::uniform(30)).states.back();
  const MatrixXd target = (0.5 * gaussian_sample(rng, 10000, 1)).array() + 2.0;
  EXPECT_LE(energy_distance(out, target), 0.05);
}

TEST(SampleOde, FirstOrderConvergence) {
  const double mu = 2.0, s = 0.5;
  AnalyticGaussianFlow<double> f(VectorXd::Constant(2, mu), s);
  RngStream rng(4);
  const MatrixXd z = gaussian_sample(rng, 16, 2);
  const MatrixXd exact = exact_flow(z, mu, s, 1.0);
  auto err = [&](std::size_t T) {
    return (sample_ode<double>(f, z, TimeGrid::uniform(T)).states.back() - exact).norm();
  };
  for (std::size_t T : {10u, 20u, 40u}) {
    const double ratio = err(T) / err(2 * T);
    EXPECT_GE(ratio, 1.7) << "T=" << T;
    EXPECT_LE(ratio, 2.3) << "T=" << T;
  }
}

TEST(SampleOde, NonFiniteStateNamesStep) {
  NanField f;
  try {
    sample_ode<double>(f, MatrixXd::Zero(1, 1), TimeGrid::uniform(10));
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_NE(std::string(e.what()).find("step 6"), std::string::npos) << e.what();
  }
}

TEST(CfgVelocity, GuidanceWeights) {
  ToyConditional f;
  RngStream rng(5);
  const MatrixXd x = gaussian_sample(rng, 4, 2);
  const TokenIds tok{3};
  const MatrixXd vc = (x.array() + 3.0).matrix();
  const MatrixXd vu = 0.5 * x;
  EXPECT_LE((cfg_velocity<double>(f, x, 0.3, tok, 0.0) - vu).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(cfg_velocity<double>(f, x, 0.3, tok, 1.0), f.velocity(x, 0.3, &tok));
  EXPECT_LE((cfg_velocity<double>(f, x, 0.3, tok, 2.0) - (2.0 * vc - vu)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CfgVelocity, AffineInWeight) {
  ToyConditional f;
  RngStream rng(6);
  const MatrixXd x = gaussian_sample(rng, 4, 2);
  const TokenIds tok{1};
  auto v = [&](double w) { return cfg_velocity<double>(f, x, 0.5, tok, w); };
  EXPECT_LE((v(0.7) + v(2.1) - v(2.8) - v(0.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CfgVelocity, MissingUnconditionalBranch) {
  ToyConditional f(false);
  EXPECT_THROW(cfg_velocity<double>(f, MatrixXd::Zero(1, 2), 0.5, TokenIds{1}, 2.0), CapabilityError);
}

TEST(Ddim, PredictX0) {
  ZeroNoise zero;
  const DiffusionSchedule sched({0.25, 1.0});
  RngStream rng(7);
  const MatrixXd x = gaussian_sample(rng, 3, 2);
  EXPECT_LE((ddim_predict_x0<double>(zero, x, 0, sched) - x / 0.5).cwiseAbs().maxCoeff(), 1e-15);
  GaussianMixtureScore<double> g(VectorXd::Ones(1), MatrixXd::Zero(1, 2), MatrixXd::Ones(1, 2));
  EXPECT_EQ(ddim_predict_x0<double>(g, x, 1, sched), x);
}

TEST(Ddim, PredictX0MatchesGaussianPosteriorMean) {
  // Data N(m, v): E[x0 | x] = m + sqrt(a) v / (a v + 1 - a) (x - sqrt(a) m).
  MatrixXd m(1, 2), var(1, 2);
  m << 1.0, -2.0;
  var << 0.5, 2.0;
  const double a = 0.05;
  GaussianMixtureScore<double> g(VectorXd::Ones(1), m, var);
  const DiffusionSchedule sched({a, 1.0});
  RngStream rng(8);
  const MatrixXd x = gaussian_sample(rng, 5, 2);
  const MatrixXd pred = ddim_predict_x0<double>(g, x, 0, sched);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double post = m(0, j) + std::sqrt(a) * var(0, j) / (a * var(0, j) + 1 - a) * (x(i, j) - std::sqrt(a) * m(0, j));
      EXPECT_NEAR(pred(i, j), post, 1e-12);
    }
}

TEST(Ddim, StepSpecialCases) {
  ZeroNoise zero;
  const DiffusionSchedule sched({0.2, 0.2, 0.8, 1.0});
  RngStream rng(9);
  const MatrixXd x = gaussian_sample(rng, 3, 2);
  EXPECT_EQ(ddim_step<double>(zero, x, 0, sched), x);
  EXPECT_LE((ddim_step<double>(zero, x, 1, sched) - std::sqrt(0.8 / 0.2) * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Ddim, EndToEndSampling) {
  VectorXd w(2);
  w << 0.5, 0.5;
  MatrixXd m(2, 2), v(2, 2);
  m << -2, 0, 2, 0;
  v.setConstant(0.25);
  const DiffusionSchedule sched = DiffusionSchedule::cosine(50);
  GaussianMixtureScore<double> g(w, m, v, sched.alphas_bar());
  RngStream rng(10);
  const MatrixXd z = gaussian_sample(rng, 10000, 2);
  const MatrixXd out = ddim_sample<double>(g, z, sched).back();
  const MatrixXd target = g.sample(rng, 10000);
  EXPECT_LE(energy_distance(out, target), 0.05);
}

TEST(Ddim, RescaledIdentity) {
  VectorXd w(2);
  w << 0.4, 0.6;
  MatrixXd m(2, 2), v(2, 2);
  m << -2, 1, 2, 0;
  v << 0.3, 0.2, 0.5, 0.25;
  const DiffusionSchedule sched = DiffusionSchedule::cosine(50);
  GaussianMixtureScore<double> g(w, m, v, sched.alphas_bar());
  RngStream rng(11);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t t = rng.below(50);
    worst = std::max(worst, rescaled_ddim_check<double>(g, gaussian_sample(rng, 1, 2), t, sched));
  }
  EXPECT_LE(worst, 1e-10);
  GaussianMixtureScore<double> single(VectorXd::Ones(1), m.topRows(1), v.topRows(1));
  EXPECT_LE(rescaled_ddim_check<double>(single, gaussian_sample(rng, 4, 2), 10, sched), 1e-10);
  EXPECT_EQ(rescaled_ddim_check<double>(g, gaussian_sample(rng, 3, 2), 0, DiffusionSchedule({0.5, 0.5, 1.0})), 0.0);
}

TEST(Ddim, ScheduleErrors) {
  EXPECT_THROW(DiffusionSchedule({0.5, 0.4, 1.0}), ScheduleError);
  const DiffusionSchedule sched({0.5, 1.0});
  EXPECT_THROW(sched.alpha_bar(5), ScheduleError);
}
