#include "flowinv/samplers.hpp"

#include <algorithm>

namespace flowinv {

TimeGrid::TimeGrid(std::vector<double> sigmas) : sigmas_(std::move(sigmas)) {
  if (sigmas_.size() < 2) throw InvalidArgument("TimeGrid: need at least one step");
  if (sigmas_.front() != 0.0 || sigmas_.back() != 1.0)
    throw InvalidArgument("TimeGrid: endpoints must be exactly 0 and 1");
  for (std::size_t i = 1; i < sigmas_.size(); ++i)
    if (!(sigmas_[i] > sigmas_[i - 1])) throw InvalidArgument("TimeGrid: sigmas must be strictly increasing");
}

TimeGrid TimeGrid::uniform(std::size_t steps) {
  if (steps < 1) throw InvalidArgument("TimeGrid: steps must be positive");
  std::vector<double> s(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) s[i] = static_cast<double>(i) / static_cast<double>(steps);
  s.back() = 1.0;
  return TimeGrid(std::move(s));
}

TimeGrid TimeGrid::shifted(std::size_t steps, double shift) {
  if (!(shift > 0.0)) throw InvalidArgument("TimeGrid: shift must be positive");
  TimeGrid base = uniform(steps);
  if (shift == 1.0) return base;
  std::vector<double> s = base.sigmas();
  for (std::size_t i = 1; i < steps; ++i) {
    const double noise = 1.0 - s[i];
    s[i] = 1.0 - shift * noise / (1.0 + (shift - 1.0) * noise);
  }
  return TimeGrid(std::move(s));
}

DiffusionSchedule::DiffusionSchedule(std::vector<double> alphas_bar) : alphas_bar_(std::move(alphas_bar)) {
  if (alphas_bar_.size() < 2) throw ScheduleError("DiffusionSchedule: need at least one step");
  for (std::size_t i = 0; i < alphas_bar_.size(); ++i) {
    if (!(alphas_bar_[i] > 0.0 && alphas_bar_[i] <= 1.0))
      throw ScheduleError("DiffusionSchedule: alpha_bar outside (0, 1] at step " + std::to_string(i));
    if (i > 0 && alphas_bar_[i] < alphas_bar_[i - 1])
      throw ScheduleError("DiffusionSchedule: alpha_bar must be nondecreasing toward the data end");
  }
}

DiffusionSchedule DiffusionSchedule::cosine(std::size_t steps, double offset, double floor) {
  if (steps < 1) throw ScheduleError("DiffusionSchedule: steps must be positive");
  const auto f = [offset](double u) {
    const double c = std::cos((u + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> a(steps + 1);
  for (std::size_t t = 0; t <= steps; ++t) {
    const double u = 1.0 - static_cast<double>(t) / static_cast<double>(steps);
    a[t] = std::clamp(f(u) / f0, floor, 1.0);
  }
  a.back() = 1.0;
  return DiffusionSchedule(std::move(a));
}

double DiffusionSchedule::alpha_bar(std::size_t t) const {
  if (t >= alphas_bar_.size()) throw ScheduleError("DiffusionSchedule: no entry for step " + std::to_string(t));
  return alphas_bar_[t];
}

}  // namespace flowinv
