#include "flowinv/numerics.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace flowinv {

MatrixXd gaussian_sample(RngStream& rng, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1)
    throw InvalidArgument("gaussian_sample: shape must be non-empty, got [" + std::to_string(rows) + ", " +
                          std::to_string(cols) + "]");
  MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = rng.gaussian();
  return out;
}

VectorXd gaussian_vector(RngStream& rng, Eigen::Index n) {
  if (n < 1) throw InvalidArgument("gaussian_vector: length must be positive");
  VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = rng.gaussian();
  return out;
}

GradCheckReport finite_diff_check(const std::function<double(const VectorXd&)>& loss,
                                  const VectorXd& analytic, const VectorXd& params, double step,
                                  const std::vector<Eigen::Index>& coordinates, double scale_floor) {
  if (!(step > 0.0)) throw InvalidArgument("finite_diff_check: step must be positive");
  if (analytic.size() != params.size()) throw InvalidArgument("finite_diff_check: gradient size mismatch");
  if (!(scale_floor > 0.0)) throw InvalidArgument("finite_diff_check: scale floor must be positive");

  std::vector<Eigen::Index> probe = coordinates;
  if (probe.empty()) {
    probe.resize(static_cast<std::size_t>(params.size()));
    std::iota(probe.begin(), probe.end(), Eigen::Index{0});
  }

  GradCheckReport report;
  report.relative_errors.reserve(probe.size());
  VectorXd p = params;
  for (const Eigen::Index i : probe) {
    if (i < 0 || i >= params.size()) throw InvalidArgument("finite_diff_check: coordinate out of range");
    const double saved = p(i);
    double f[4];
    const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
    for (int k = 0; k < 4; ++k) {
      p(i) = saved + offsets[k] * step;
      f[k] = loss(p);
      if (!std::isfinite(f[k]))
        throw NumericalFailure("finite_diff_check: non-finite loss probing coordinate " + std::to_string(i));
    }
    p(i) = saved;
    const double numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * step);
    const double exact = analytic(i);
    const double denom = std::max({std::abs(exact), std::abs(numeric), scale_floor});
    const double rel = std::abs(exact - numeric) / denom;
    report.relative_errors.push_back(rel);
    if (report.worst_parameter_index < 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter_index = i;
    }
  }
  return report;
}

namespace detail {

long double mean_pairwise_distance(const RowMatrixXd& a, const RowMatrixXd& b) {
  const Eigen::Index d = a.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  long double total = 0.0L;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double* ai = pa + i * d;
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double* bj = pb + j * d;
      double sq = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = ai[k] - bj[k];
        sq += diff * diff;
      }
      row += std::sqrt(sq);
    }
    total += row;
  }
  return total / (static_cast<long double>(a.rows()) * static_cast<long double>(b.rows()));
}

bool canonical_first(const RowMatrixXd& a, const RowMatrixXd& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return a.data()[i] < b.data()[i];
  return true;
}

}  // namespace detail

double mean(const std::vector<double>& values) {
  if (values.empty()) throw InvalidArgument("mean of empty set");
  long double total = 0.0L;
  for (const double v : values) total += v;
  return static_cast<double>(total / static_cast<long double>(values.size()));
}

namespace {
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal-length series");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace flowinv
