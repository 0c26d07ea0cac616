#pragma once

#include "flowinv/core.hpp"
#include "flowinv/rng.hpp"

#include <algorithm>
#include <cstddef>
#include <functional>
#include <vector>

namespace flowinv {

// i.i.d. standard normal entries, filled row by row.
MatrixXd gaussian_sample(RngStream& rng, Eigen::Index rows, Eigen::Index cols);
VectorXd gaussian_vector(RngStream& rng, Eigen::Index n);

struct GradCheckReport {
  double max_relative_error = 0.0;
  Eigen::Index worst_parameter_index = -1;
  std::vector<double> relative_errors;
};

// Fourth-order central differences
// (-f(p+2h) + 8f(p+h) - 8f(p-h) + f(p-2h)) / 12h against `analytic`.
// Relative error uses max(|analytic|, |numeric|, scale_floor) as denominator, so
// entries below the floor (pure round-off) are compared in absolute terms.
// `coordinates`, when non-empty, restricts the probe to those indices.
GradCheckReport finite_diff_check(const std::function<double(const VectorXd&)>& loss,
                                  const VectorXd& analytic, const VectorXd& params, double step,
                                  const std::vector<Eigen::Index>& coordinates = {}, double scale_floor = 1e-6);

namespace detail {

long double mean_pairwise_distance(const RowMatrixXd& a, const RowMatrixXd& b);
// Total order on sample sets so the cross term is summed the same way
// regardless of argument order.
bool canonical_first(const RowMatrixXd& a, const RowMatrixXd& b);

}  // namespace detail

// Squared energy distance between empirical distributions (V-statistic,
// exhaustive pairs): 2 E|X-Y| - E|X-X'| - E|Y-Y'|. Exactly symmetric.
template <typename DerivedA, typename DerivedB>
double energy_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.cols())
    throw InvalidArgument("energy_distance: dimension mismatch (" + std::to_string(a.cols()) +
                          " vs " + std::to_string(b.cols()) + ")");
  if (a.rows() < 2 || b.rows() < 2) throw InvalidArgument("energy_distance: need at least 2 samples per set");
  const RowMatrixXd ra = a.template cast<double>();
  const RowMatrixXd rb = b.template cast<double>();
  const long double cross = detail::canonical_first(ra, rb) ? detail::mean_pairwise_distance(ra, rb)
                                                            : detail::mean_pairwise_distance(rb, ra);
  const long double self = detail::mean_pairwise_distance(ra, ra) + detail::mean_pairwise_distance(rb, rb);
  return static_cast<double>(2.0L * cross - self);
}

template <typename T>
T median(std::vector<T> values) {
  if (values.empty()) throw InvalidArgument("median of empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  T upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const T lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / T(2);
}

double mean(const std::vector<double>& values);

// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace flowinv
