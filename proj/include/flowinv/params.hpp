#pragma once

#include "flowinv/core.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace flowinv {

// Named row-major blocks laid out back to back in one flat vector. The same
// layout indexes parameters, gradients and optimizer moments.
class ParameterLayout {
 public:
  struct Entry {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    Eigen::Index offset;
  };

  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  Eigen::Index size() const { return size_; }
  const Entry& entry(std::size_t id) const { return entries_.at(id); }
  const std::vector<Entry>& entries() const { return entries_; }

  Eigen::Map<RowMatrixXd> view(VectorXd& flat, std::size_t id) const {
    const Entry& e = entries_[id];
    return {flat.data() + e.offset, e.rows, e.cols};
  }
  Eigen::Map<const RowMatrixXd> view(const VectorXd& flat, std::size_t id) const {
    const Entry& e = entries_[id];
    return {flat.data() + e.offset, e.rows, e.cols};
  }
  // Row vector view for bias-like entries.
  Eigen::Map<const Eigen::RowVectorXd> row(const VectorXd& flat, std::size_t id) const {
    const Entry& e = entries_[id];
    return {flat.data() + e.offset, e.rows * e.cols};
  }
  Eigen::Map<Eigen::RowVectorXd> row(VectorXd& flat, std::size_t id) const {
    const Entry& e = entries_[id];
    return {flat.data() + e.offset, e.rows * e.cols};
  }

 private:
  std::vector<Entry> entries_;
  Eigen::Index size_ = 0;
};

// Smooth activation used throughout: x * sigmoid(x).
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

template <typename Derived>
MatrixXd silu(const Eigen::MatrixBase<Derived>& m) {
  return m.unaryExpr([](double v) { return silu(v); });
}

template <typename Derived>
MatrixXd silu_grad(const Eigen::MatrixBase<Derived>& m) {
  return m.unaryExpr([](double v) { return silu_grad(v); });
}

// Fourier features of sigma on [0, 1]: [cos(pi (k+1) sigma), sin(pi (k+1) sigma)]
// for k = 0..dim/2-1.
MatrixXd time_embedding(const VectorXd& sigmas, Eigen::Index dim);

}  // namespace flowinv
