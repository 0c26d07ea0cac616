#pragma once

#include "flowinv/core.hpp"
#include "flowinv/rng.hpp"

namespace flowinv::nn {

inline void fill_normal(Eigen::Map<RowMatrixXd> m, RngStream& rng, double scale) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.gaussian();
}

// Row b of `per_sample` repeated `k` times: (B x h) -> (B*k x h).
inline MatrixXd expand(const MatrixXd& per_sample, Eigen::Index k) {
  MatrixXd out(per_sample.rows() * k, per_sample.cols());
  for (Eigen::Index b = 0; b < per_sample.rows(); ++b) out.middleRows(b * k, k).rowwise() = per_sample.row(b);
  return out;
}

// Inverse of expand for gradients: sums each group of k rows.
inline MatrixXd reduce(const MatrixXd& per_token, Eigen::Index k) {
  const Eigen::Index batch = per_token.rows() / k;
  MatrixXd out(batch, per_token.cols());
  for (Eigen::Index b = 0; b < batch; ++b) out.row(b) = per_token.middleRows(b * k, k).colwise().sum();
  return out;
}

constexpr double kLayerNormEps = 1e-6;

// Row-wise layer norm without affine parameters; returns normalized rows and
// stores 1/std per row.
inline MatrixXd layer_norm(const MatrixXd& x, VectorXd& inv_std) {
  const double h = static_cast<double>(x.cols());
  const VectorXd mean = x.rowwise().sum() / h;
  MatrixXd centred = x.colwise() - mean;
  const VectorXd var = centred.rowwise().squaredNorm() / h;
  inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  return inv_std.asDiagonal() * centred;
}

inline MatrixXd layer_norm_backward(const MatrixXd& d_normed, const MatrixXd& normed, const VectorXd& inv_std) {
  const double h = static_cast<double>(normed.cols());
  const VectorXd mean_d = d_normed.rowwise().sum() / h;
  const VectorXd mean_dn = d_normed.cwiseProduct(normed).rowwise().sum() / h;
  MatrixXd out = d_normed.colwise() - mean_d;
  out -= mean_dn.asDiagonal() * normed;
  return inv_std.asDiagonal() * out;
}

}  // namespace flowinv::nn
