#include "flowinv/params.hpp"

#include <cmath>
#include <numbers>

namespace flowinv {

std::size_t ParameterLayout::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1) throw InvalidArgument("ParameterLayout: empty block " + name);
  entries_.push_back({std::move(name), rows, cols, size_});
  size_ += rows * cols;
  return entries_.size() - 1;
}

MatrixXd time_embedding(const VectorXd& sigmas, Eigen::Index dim) {
  if (dim < 2 || dim % 2 != 0) throw InvalidArgument("time_embedding: dim must be even and >= 2");
  const Eigen::Index half = dim / 2;
  MatrixXd out(sigmas.size(), dim);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double freq = std::numbers::pi * static_cast<double>(k + 1);
    for (Eigen::Index r = 0; r < sigmas.size(); ++r) {
      const double arg = sigmas(r) * freq;
      out(r, k) = std::cos(arg);
      out(r, half + k) = std::sin(arg);
    }
  }
  return out;
}

}  // namespace flowinv
