#pragma once

#include "flowinv/core.hpp"
#include "flowinv/fields.hpp"

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace flowinv {

// Ascending sigma grid with sigmas.front() == 0 and sigmas.back() == 1.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> sigmas);

  static TimeGrid uniform(std::size_t steps);
  // Resolution-style shift applied to the noise level 1 - sigma:
  //   t' = shift t / (1 + (shift - 1) t). shift = 1 is the identity.
  static TimeGrid shifted(std::size_t steps, double shift);

  std::size_t steps() const { return sigmas_.size() - 1; }
  double sigma(std::size_t t) const { return sigmas_.at(t); }
  // sigma_{t+1} - sigma_t, positive.
  double delta(std::size_t t) const { return sigmas_.at(t + 1) - sigmas_.at(t); }
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  std::vector<double> sigmas_;
};

// Cumulative signal levels indexed in sampling order: alphas_bar[0] is the
// noisiest level and alphas_bar[steps] is the data end (== 1).
class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(std::vector<double> alphas_bar);

  // Cosine schedule alpha_bar(u) = cos^2((u + s)/(1 + s) pi/2) / cos^2(s/(1 + s) pi/2)
  // at diffusion time u = 1 - t/steps, clamped below at `floor`.
  static DiffusionSchedule cosine(std::size_t steps, double offset = 0.008, double floor = 1e-4);

  std::size_t steps() const { return alphas_bar_.size() - 1; }
  double alpha_bar(std::size_t t) const;
  const std::vector<double>& alphas_bar() const { return alphas_bar_; }

 private:
  std::vector<double> alphas_bar_;
};

template <typename Scalar>
struct Trajectory {
  TimeGrid grid;
  std::vector<Matrix<Scalar>> states;
  Condition condition;
};

namespace detail {

inline void check_step(std::size_t t, std::size_t steps, const char* op) {
  if (t >= steps)
    throw InvalidArgument(std::string(op) + ": step index " + std::to_string(t) + " outside [0, " +
                          std::to_string(steps) + ")");
}

template <typename Scalar>
void check_finite_state(const Matrix<Scalar>& x, const char* op, std::size_t t) {
  if (!x.allFinite()) throw NumericalFailure(std::string(op) + ": non-finite state at step " + std::to_string(t));
}

}  // namespace detail

// Classifier-free guidance: v_u + w (v_c - v_u). w == 1 returns v_c as
// evaluated, without the affine recombination.
template <typename Scalar>
Matrix<Scalar> cfg_velocity(const VelocityField<Scalar>& field, const Matrix<Scalar>& x, Scalar sigma,
                            const TokenIds& tokens, double w) {
  if (!field.is_conditional() || tokens.empty()) return field.velocity(x, sigma, nullptr);
  if (w == 1.0) return field.velocity(x, sigma, &tokens);
  if (!field.supports_unconditional())
    throw CapabilityError("cfg_velocity: field has no unconditional branch for guidance weight " + std::to_string(w));
  const Matrix<Scalar> conditional = field.velocity(x, sigma, &tokens);
  const Matrix<Scalar> unconditional = field.velocity(x, sigma, nullptr);
  return unconditional + Scalar(w) * (conditional - unconditional);
}

template <typename Scalar>
Matrix<Scalar> guided_velocity(const VelocityField<Scalar>& field, const Matrix<Scalar>& x, Scalar sigma,
                               const Condition& cond) {
  return cfg_velocity(field, x, sigma, cond.tokens, cond.guidance);
}

// x_{t+1} = x_t + (sigma_{t+1} - sigma_t) v(x_t, sigma_t).
template <typename Scalar>
Matrix<Scalar> euler_step(const VelocityField<Scalar>& field, const Matrix<Scalar>& x, std::size_t t,
                          const TimeGrid& grid, const Condition& cond = {}) {
  detail::check_step(t, grid.steps(), "euler_step");
  const Matrix<Scalar> v = guided_velocity(field, x, Scalar(grid.sigma(t)), cond);
  Matrix<Scalar> next = x + Scalar(grid.delta(t)) * v;
  detail::check_finite_state(next, "euler_step", t);
  return next;
}

// Integrates from sigma = 0 to sigma = 1, keeping every node.
template <typename Scalar>
Trajectory<Scalar> sample_ode(const VelocityField<Scalar>& field, const Matrix<Scalar>& x0, const TimeGrid& grid,
                              const Condition& cond = {}) {
  detail::check_finite_state(x0, "sample_ode", 0);
  Trajectory<Scalar> traj{grid, {}, cond};
  traj.states.reserve(grid.steps() + 1);
  traj.states.push_back(x0);
  for (std::size_t t = 0; t < grid.steps(); ++t) traj.states.push_back(euler_step(field, traj.states.back(), t, grid, cond));
  return traj;
}

// Predicted clean sample (x - sqrt(1 - a_t) eps_hat) / sqrt(a_t).
template <typename Scalar>
Matrix<Scalar> ddim_predict_x0(const NoisePredictor<Scalar>& model, const Matrix<Scalar>& x, std::size_t t,
                               const DiffusionSchedule& schedule) {
  const double a = schedule.alpha_bar(t);
  if (!(a > 0.0)) throw ScheduleError("ddim_predict_x0: alpha_bar must be positive at step " + std::to_string(t));
  const Matrix<Scalar> eps = model.predict_noise(x, Scalar(a));
  return (x - Scalar(std::sqrt(1.0 - a)) * eps) / Scalar(std::sqrt(a));
}

// Deterministic DDIM update toward the data end:
//   x_{t+1} = sqrt(a_{t+1}) f(x_t) + sqrt(1 - a_{t+1}) eps_hat(x_t, a_t).
template <typename Scalar>
Matrix<Scalar> ddim_step(const NoisePredictor<Scalar>& model, const Matrix<Scalar>& x, std::size_t t,
                         const DiffusionSchedule& schedule) {
  detail::check_step(t, schedule.steps(), "ddim_step");
  const double a = schedule.alpha_bar(t);
  const double a_next = schedule.alpha_bar(t + 1);
  if (a_next == a) return x;
  const Matrix<Scalar> eps = model.predict_noise(x, Scalar(a));
  const Matrix<Scalar> x0_hat = (x - Scalar(std::sqrt(1.0 - a)) * eps) / Scalar(std::sqrt(a));
  Matrix<Scalar> next = Scalar(std::sqrt(a_next)) * x0_hat + Scalar(std::sqrt(1.0 - a_next)) * eps;
  detail::check_finite_state(next, "ddim_step", t);
  return next;
}

// Naive DDIM inversion x_{t+1} -> x_t, with eps_hat evaluated at the known
// later state x_{t+1} but at level a_t (the DDIM analogue of the
// approximate Euler inversion).
template <typename Scalar>
Matrix<Scalar> ddim_invert_step(const NoisePredictor<Scalar>& model, const Matrix<Scalar>& x_next, std::size_t t,
                                const DiffusionSchedule& schedule) {
  detail::check_step(t, schedule.steps(), "ddim_invert_step");
  const double a = schedule.alpha_bar(t);
  const double a_next = schedule.alpha_bar(t + 1);
  if (a_next == a) return x_next;
  const Matrix<Scalar> eps = model.predict_noise(x_next, Scalar(a));
  const Matrix<Scalar> x0_hat = (x_next - Scalar(std::sqrt(1.0 - a_next)) * eps) / Scalar(std::sqrt(a_next));
  Matrix<Scalar> prev = Scalar(std::sqrt(a)) * x0_hat + Scalar(std::sqrt(1.0 - a)) * eps;
  detail::check_finite_state(prev, "ddim_invert_step", t);
  return prev;
}

// With y = x / sqrt(a) and rho = sqrt((1 - a) / a), one DDIM step is exactly
// an Euler step y_{t+1} = y_t + (rho_{t+1} - rho_t) eps_hat. Returns the
// max-abs residual of that identity for the step taken from x.
template <typename Scalar>
double rescaled_ddim_check(const NoisePredictor<Scalar>& model, const Matrix<Scalar>& x, std::size_t t,
                           const DiffusionSchedule& schedule) {
  detail::check_step(t, schedule.steps(), "rescaled_ddim_check");
  const double a = schedule.alpha_bar(t);
  const double a_next = schedule.alpha_bar(t + 1);
  const Matrix<Scalar> x_next = ddim_step(model, x, t, schedule);
  const Matrix<Scalar> y = x / Scalar(std::sqrt(a));
  const Matrix<Scalar> y_next = x_next / Scalar(std::sqrt(a_next));
  const double rho = std::sqrt((1.0 - a) / a);
  const double rho_next = std::sqrt((1.0 - a_next) / a_next);
  if (rho_next == rho) return static_cast<double>((y_next - y).cwiseAbs().maxCoeff());
  const Matrix<Scalar> eps = model.predict_noise(x, Scalar(a));
  const Matrix<Scalar> euler = Scalar(rho_next - rho) * eps;
  return static_cast<double>(((y_next - y) - euler).cwiseAbs().maxCoeff());
}

template <typename Scalar>
std::vector<Matrix<Scalar>> ddim_sample(const NoisePredictor<Scalar>& model, const Matrix<Scalar>& x0,
                                        const DiffusionSchedule& schedule) {
  std::vector<Matrix<Scalar>> states{x0};
  states.reserve(schedule.steps() + 1);
  for (std::size_t t = 0; t < schedule.steps(); ++t) states.push_back(ddim_step(model, states.back(), t, schedule));
  return states;
}

}  // namespace flowinv
