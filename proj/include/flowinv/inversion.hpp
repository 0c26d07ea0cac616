#pragma once

#include "flowinv/core.hpp"
#include "flowinv/fields.hpp"
#include "flowinv/samplers.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace flowinv {

enum class Aggregation { average, last };

struct FixedPointConfig {
  int iterations = 3;
  Aggregation aggregation = Aggregation::average;
  // x^i <- (1 - damping) x^{i-1} + damping (fixed-point map). 1 = undamped.
  double damping = 1.0;
};

struct StepDiagnostics {
  // ||x^i - x^{i-1}|| (Frobenius over the batch) for i = 1..I.
  std::vector<double> iterate_distances;
  // ||v(x_{t+1}, sigma_t) - v(x_t, sigma_t)|| with x_t the returned state.
  double velocity_gap = 0.0;
};

// Stage I trajectory plus optional Stage II compensations.
// trajectory.states[k] sits at grid node k (k = 0 noise end, k = T data end);
// compensations[t] corrects the step t -> t + 1; diagnostics[t] describes the
// inverse step t + 1 -> t.
template <typename Scalar>
struct InversionResult {
  Trajectory<Scalar> trajectory;
  std::vector<Matrix<Scalar>> compensations;
  std::vector<StepDiagnostics> diagnostics;

  const Matrix<Scalar>& noise() const { return trajectory.states.front(); }
  const Matrix<Scalar>& data() const { return trajectory.states.back(); }
  bool compensated() const { return !compensations.empty(); }
};

// Approximate inverse step: the velocity is evaluated at the known later
// state x_{t+1}, at time sigma_t.
template <typename Scalar>
Matrix<Scalar> naive_invert_step(const VelocityField<Scalar>& field, const Matrix<Scalar>& x_next, std::size_t t,
                                 const TimeGrid& grid, const Condition& cond = {}) {
  detail::check_step(t, grid.steps(), "naive_invert_step");
  const Matrix<Scalar> v = guided_velocity(field, x_next, Scalar(grid.sigma(t)), cond);
  Matrix<Scalar> prev = x_next + Scalar(-grid.delta(t)) * v;
  detail::check_finite_state(prev, "naive_invert_step", t);
  return prev;
}

// Fixed-point refinement of x_t = x_{t+1} + (sigma_t - sigma_{t+1}) v(x_t, sigma_t).
// Starts from x^0 = x_{t+1}; x^1 is the naive inverse, and zero iterations
// also return the naive inverse. The iterate index here counts from the
// initial guess x^0, one below the subscript convention that starts at x^1.
template <typename Scalar>
std::pair<Matrix<Scalar>, StepDiagnostics> fixed_point_invert_step(const VelocityField<Scalar>& field,
                                                                   const Matrix<Scalar>& x_next, std::size_t t,
                                                                   const TimeGrid& grid, const Condition& cond,
                                                                   const FixedPointConfig& cfg) {
  detail::check_step(t, grid.steps(), "fixed_point_invert_step");
  if (cfg.iterations < 0) throw InvalidArgument("fixed_point_invert_step: iterations must be non-negative");
  if (!(cfg.damping > 0.0 && cfg.damping <= 1.0))
    throw InvalidArgument("fixed_point_invert_step: damping must lie in (0, 1]");

  StepDiagnostics diag;
  if (cfg.iterations == 0) return {naive_invert_step(field, x_next, t, grid, cond), diag};

  const Scalar sigma = Scalar(grid.sigma(t));
  const Scalar step = Scalar(-grid.delta(t));
  const Scalar damping = Scalar(cfg.damping);
  const double limit = 1e6 * std::max(static_cast<double>(x_next.norm()), 1.0);

  Matrix<Scalar> current = x_next;
  Matrix<Scalar> sum = Matrix<Scalar>::Zero(x_next.rows(), x_next.cols());
  diag.iterate_distances.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int i = 1; i <= cfg.iterations; ++i) {
    Matrix<Scalar> mapped = x_next + step * guided_velocity(field, current, sigma, cond);
    if (cfg.damping != 1.0) mapped = (Scalar(1) - damping) * current + damping * mapped;
    const double norm = static_cast<double>(mapped.norm());
    if (!mapped.allFinite() || norm > limit)
      throw DivergenceError("fixed-point inversion diverged at step t=" + std::to_string(t) +
                            ", iteration i=" + std::to_string(i));
    diag.iterate_distances.push_back(static_cast<double>((mapped - current).norm()));
    sum += mapped;
    current = std::move(mapped);
  }
  if (cfg.aggregation == Aggregation::average) return {sum / Scalar(cfg.iterations), diag};
  return {current, diag};
}

// Closed-form inverse for affine fields: (I - d A) x_t = x_{t+1} + d b with
// d = sigma_t - sigma_{t+1}, A and b taken at sigma_t.
template <typename Scalar>
Matrix<Scalar> exact_linear_invert_step(const LinearField<Scalar>& field, const Matrix<Scalar>& x_next, std::size_t t,
                                        const TimeGrid& grid) {
  detail::check_step(t, grid.steps(), "exact_linear_invert_step");
  const Scalar d = Scalar(-grid.delta(t));
  const Matrix<Scalar> a = field.a_at(grid.sigma(t));
  const Vector<Scalar> b = field.b_at(grid.sigma(t));
  const Matrix<Scalar> system = Matrix<Scalar>::Identity(a.rows(), a.cols()) - d * a;
  Eigen::FullPivLU<Matrix<Scalar>> lu(system);
  if (!lu.isInvertible())
    throw SingularityError("exact_linear_invert_step: I - d A is singular at step " + std::to_string(t));
  const Matrix<Scalar> rhs = (x_next.rowwise() + (d * b).transpose()).transpose();
  return lu.solve(rhs).transpose();
}

namespace detail {

template <typename Scalar>
double velocity_gap(const VelocityField<Scalar>& field, const Matrix<Scalar>& x_next, const Matrix<Scalar>& x,
                    std::size_t t, const TimeGrid& grid, const Condition& cond) {
  const Scalar sigma = Scalar(grid.sigma(t));
  return static_cast<double>(
      (guided_velocity(field, x_next, sigma, cond) - guided_velocity(field, x, sigma, cond)).norm());
}

}  // namespace detail

// Stage I: walk from the data end to the noise end with fixed-point steps.
template <typename Scalar>
InversionResult<Scalar> invert(const VelocityField<Scalar>& field, const Matrix<Scalar>& x1, const TimeGrid& grid,
                               const Condition& cond = {}, const FixedPointConfig& cfg = {},
                               bool record_velocity_gap = false) {
  detail::check_finite_state(x1, "invert", grid.steps());
  const std::size_t steps = grid.steps();
  InversionResult<Scalar> result{Trajectory<Scalar>{grid, std::vector<Matrix<Scalar>>(steps + 1), cond}, {}, {}};
  result.diagnostics.resize(steps);
  result.trajectory.states[steps] = x1;
  for (std::size_t k = steps; k-- > 0;) {
    auto [prev, diag] = fixed_point_invert_step(field, result.trajectory.states[k + 1], k, grid, cond, cfg);
    if (record_velocity_gap)
      diag.velocity_gap = detail::velocity_gap(field, result.trajectory.states[k + 1], prev, k, grid, cond);
    result.trajectory.states[k] = std::move(prev);
    result.diagnostics[k] = std::move(diag);
  }
  return result;
}

// Stage II: eps_t = x_{t+1} - (x_t + (sigma_{t+1} - sigma_t) v(x_t, sigma_t)).
template <typename Scalar>
InversionResult<Scalar> compute_compensations(const VelocityField<Scalar>& field, InversionResult<Scalar> inv,
                                              const Condition& cond) {
  const TimeGrid& grid = inv.trajectory.grid;
  const std::size_t steps = grid.steps();
  if (inv.trajectory.states.size() != steps + 1)
    throw StateError("compute_compensations: trajectory is incomplete");
  for (const auto& s : inv.trajectory.states)
    if (s.size() == 0) throw StateError("compute_compensations: trajectory is incomplete");
  inv.compensations.assign(steps, Matrix<Scalar>());
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix<Scalar> predicted = euler_step(field, inv.trajectory.states[t], t, grid, cond);
    inv.compensations[t] = inv.trajectory.states[t + 1] - predicted;
  }
  return inv;
}

// Regenerates from the inverted noise under `target`. With compensation on
// and the compensation-time condition, the replay lands on the stored
// trajectory at every node.
template <typename Scalar>
Trajectory<Scalar> regenerate(const VelocityField<Scalar>& field, const InversionResult<Scalar>& inv,
                              const Condition& target, bool apply_compensation) {
  const TimeGrid& grid = inv.trajectory.grid;
  if (apply_compensation && inv.compensations.size() != grid.steps())
    throw StateError("regenerate: compensations requested but not computed");
  if (inv.trajectory.states.empty() || inv.noise().size() == 0) throw StateError("regenerate: empty inversion");
  Trajectory<Scalar> out{grid, {}, target};
  out.states.reserve(grid.steps() + 1);
  out.states.push_back(inv.noise());
  for (std::size_t t = 0; t < grid.steps(); ++t) {
    Matrix<Scalar> next = euler_step(field, out.states.back(), t, grid, target);
    if (apply_compensation) next += inv.compensations[t];
    out.states.push_back(std::move(next));
  }
  return out;
}

struct RoundTripRow {
  FixedPointConfig config;
  // Mean squared error of the uncompensated regeneration against the input.
  double mse = 0.0;
  // max |x_hat - x1| / max |x1| for the compensated regeneration.
  double compensated_rel_err = 0.0;
  double max_compensation_norm = 0.0;
  double mean_compensation_norm = 0.0;
  double mean_velocity_gap = 0.0;
  double max_velocity_gap = 0.0;
};

template <typename Scalar>
double relative_linf(const Matrix<Scalar>& estimate, const Matrix<Scalar>& reference) {
  const double scale = std::max(static_cast<double>(reference.cwiseAbs().maxCoeff()), 1e-300);
  return static_cast<double>((estimate - reference).cwiseAbs().maxCoeff()) / scale;
}

// Naive vs fixed-point vs compensated reconstruction of x1, one row per config.
template <typename Scalar>
std::vector<RoundTripRow> round_trip_report(const VelocityField<Scalar>& field, const Matrix<Scalar>& x1,
                                            const TimeGrid& grid, const Condition& cond,
                                            const std::vector<FixedPointConfig>& configs) {
  std::vector<RoundTripRow> rows;
  rows.reserve(configs.size());
  for (const auto& cfg : configs) {
    InversionResult<Scalar> inv = compute_compensations(field, invert(field, x1, grid, cond, cfg, true), cond);
    const Matrix<Scalar> plain = regenerate(field, inv, cond, false).states.back();
    const Matrix<Scalar> fixed = regenerate(field, inv, cond, true).states.back();

    RoundTripRow row;
    row.config = cfg;
    row.mse = static_cast<double>((plain - x1).squaredNorm()) / static_cast<double>(x1.size());
    row.compensated_rel_err = relative_linf(fixed, x1);
    double sum_comp = 0.0, sum_gap = 0.0;
    for (const auto& eps : inv.compensations) {
      const double n = static_cast<double>(eps.norm());
      row.max_compensation_norm = std::max(row.max_compensation_norm, n);
      sum_comp += n;
    }
    for (const auto& d : inv.diagnostics) {
      row.max_velocity_gap = std::max(row.max_velocity_gap, d.velocity_gap);
      sum_gap += d.velocity_gap;
    }
    const double steps = static_cast<double>(grid.steps());
    row.mean_compensation_norm = sum_comp / steps;
    row.mean_velocity_gap = sum_gap / steps;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace flowinv
