#pragma once

#include "flowinv/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace flowinv {

// Time runs from sigma = 0 (standard normal source) to sigma = 1 (data).
//
// A velocity field maps a batch of states (rows) at a shared sigma to a batch
// of velocities. Conditional fields take prompt token ids; a null `tokens`
// pointer requests the unconditional branch.
template <typename Scalar>
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  virtual Matrix<Scalar> velocity(const Matrix<Scalar>& x, Scalar sigma, const TokenIds* tokens) const = 0;

  virtual bool is_conditional() const { return false; }
  virtual bool supports_unconditional() const { return true; }
};

// Token ids plus the classifier-free guidance weight to evaluate them with.
// Empty tokens mean "no prompt".
struct Condition {
  TokenIds tokens;
  double guidance = 1.0;

  bool has_prompt() const { return !tokens.empty(); }
};

// p0 = N(0, I), p1 = N(mu, s^2 I), coupled independently along the linear
// interpolant x_sigma = sigma x1 + (1 - sigma) x0. Per axis, with
// u = x1 - x0 and V(sigma) = sigma^2 s^2 + (1 - sigma)^2,
//   Cov(u, x_sigma) = sigma s^2 - (1 - sigma),
// so the marginal velocity E[u | x_sigma = x] is
//   mu + c(sigma) (x - sigma mu),  c = (sigma s^2 - (1 - sigma)) / V(sigma).
// The ODE flow map is x(sigma) = sigma mu + sqrt(V(sigma)) x(0).
template <typename Scalar>
class AnalyticGaussianFlow final : public VelocityField<Scalar> {
 public:
  AnalyticGaussianFlow(Vector<Scalar> mu, Scalar s) : mu_(std::move(mu)), s_(s) {
    if (!(s > Scalar(0))) throw InvalidArgument("AnalyticGaussianFlow: s must be positive");
    if (mu_.size() < 1) throw InvalidArgument("AnalyticGaussianFlow: empty mean");
  }

  const Vector<Scalar>& mu() const { return mu_; }
  Scalar s() const { return s_; }
  Eigen::Index dim() const { return mu_.size(); }

  Scalar marginal_variance(Scalar sigma) const {
    const Scalar one_minus = Scalar(1) - sigma;
    return sigma * sigma * s_ * s_ + one_minus * one_minus;
  }

  Scalar coefficient(Scalar sigma) const {
    return (sigma * s_ * s_ - (Scalar(1) - sigma)) / marginal_variance(sigma);
  }

  Matrix<Scalar> velocity(const Matrix<Scalar>& x, Scalar sigma, const TokenIds*) const override {
    check(x, sigma);
    const Scalar c = coefficient(sigma);
    const RowVector<Scalar> mu_row = mu_.transpose();
    return (c * (x.rowwise() - sigma * mu_row)).rowwise() + mu_row;
  }

  // Exact ODE solution from the noise end to time sigma.
  Matrix<Scalar> flow_map(const Matrix<Scalar>& x0, Scalar sigma) const {
    check(x0, sigma);
    return (std::sqrt(marginal_variance(sigma)) * x0).rowwise() + (sigma * mu_).transpose();
  }

 private:
  void check(const Matrix<Scalar>& x, Scalar sigma) const {
    if (!(sigma >= Scalar(0) && sigma <= Scalar(1))) throw InvalidArgument("sigma outside [0, 1]");
    if (x.cols() != mu_.size()) throw InvalidArgument("AnalyticGaussianFlow: state dimension mismatch");
  }

  Vector<Scalar> mu_;
  Scalar s_;
};

// v(x, sigma) = A(sigma) x + b(sigma), with A and b tabulated at nodes and
// linearly interpolated in between.
template <typename Scalar>
class LinearField final : public VelocityField<Scalar> {
 public:
  LinearField(std::vector<double> nodes, std::vector<Matrix<Scalar>> a, std::vector<Vector<Scalar>> b)
      : nodes_(std::move(nodes)), a_(std::move(a)), b_(std::move(b)) {
    if (nodes_.empty()) throw ConfigError("LinearField: no coefficient nodes");
    if (a_.size() != nodes_.size() || b_.size() != nodes_.size())
      throw ConfigError("LinearField: coefficient tables must match node count");
    if (!std::is_sorted(nodes_.begin(), nodes_.end()) ||
        std::adjacent_find(nodes_.begin(), nodes_.end()) != nodes_.end())
      throw ConfigError("LinearField: nodes must be strictly increasing");
    const Eigen::Index d = b_.front().size();
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (a_[k].rows() != d || a_[k].cols() != d || b_[k].size() != d)
        throw ConfigError("LinearField: inconsistent coefficient shapes at node " + std::to_string(k));
      if (!a_[k].allFinite() || !b_[k].allFinite())
        throw ConfigError("LinearField: non-finite coefficients at node " + std::to_string(k));
    }
  }

  // Same A and b at every node of `grid_sigmas`.
  static LinearField constant(const std::vector<double>& grid_sigmas, const Matrix<Scalar>& a,
                              const Vector<Scalar>& b) {
    return LinearField(grid_sigmas, std::vector<Matrix<Scalar>>(grid_sigmas.size(), a),
                       std::vector<Vector<Scalar>>(grid_sigmas.size(), b));
  }

  Eigen::Index dim() const { return b_.front().size(); }
  const std::vector<double>& nodes() const { return nodes_; }

  Matrix<Scalar> a_at(double sigma) const { return interpolate(a_, sigma); }
  Vector<Scalar> b_at(double sigma) const { return interpolate(b_, sigma); }

  Matrix<Scalar> velocity(const Matrix<Scalar>& x, Scalar sigma, const TokenIds*) const override {
    if (x.cols() != dim()) throw InvalidArgument("LinearField: state dimension mismatch");
    const double s = static_cast<double>(sigma);
    const Matrix<Scalar> a = a_at(s);
    const Vector<Scalar> b = b_at(s);
    return (x * a.transpose()).rowwise() + b.transpose();
  }

 private:
  template <typename T>
  T interpolate(const std::vector<T>& table, double sigma) const {
    constexpr double kSnap = 1e-12;
    if (sigma < nodes_.front() - kSnap || sigma > nodes_.back() + kSnap)
      throw ConfigError("LinearField: no coefficients for sigma=" + std::to_string(sigma));
    const auto hi = std::lower_bound(nodes_.begin(), nodes_.end(), sigma);
    const auto k = static_cast<std::size_t>(hi - nodes_.begin());
    if (k < nodes_.size() && std::abs(nodes_[k] - sigma) <= kSnap) return table[k];
    if (k > 0 && std::abs(nodes_[k - 1] - sigma) <= kSnap) return table[k - 1];
    if (k == 0 || k == nodes_.size()) return table[k == 0 ? 0 : nodes_.size() - 1];
    const double w = (sigma - nodes_[k - 1]) / (nodes_[k] - nodes_[k - 1]);
    return (Scalar(1 - w) * table[k - 1] + Scalar(w) * table[k]).eval();
  }

  std::vector<double> nodes_;
  std::vector<Matrix<Scalar>> a_;
  std::vector<Vector<Scalar>> b_;
};

// Straight-line field of one coupled pair: v = x1 - x0 everywhere.
template <typename Scalar>
class ConstantCouplingField final : public VelocityField<Scalar> {
 public:
  ConstantCouplingField(Matrix<Scalar> x0, Matrix<Scalar> x1) : x0_(std::move(x0)), x1_(std::move(x1)) {
    if (x0_.rows() != x1_.rows() || x0_.cols() != x1_.cols())
      throw InvalidArgument("ConstantCouplingField: x0 and x1 shapes differ");
    delta_ = x1_ - x0_;
  }

  const Matrix<Scalar>& x0() const { return x0_; }
  const Matrix<Scalar>& x1() const { return x1_; }

  Matrix<Scalar> velocity(const Matrix<Scalar>& x, Scalar, const TokenIds*) const override {
    if (x.rows() == delta_.rows() && x.cols() == delta_.cols()) return delta_;
    if (delta_.rows() == 1 && x.cols() == delta_.cols()) return delta_.replicate(x.rows(), 1);
    throw InvalidArgument("ConstantCouplingField: state shape mismatch");
  }

 private:
  Matrix<Scalar> x0_;
  Matrix<Scalar> x1_;
  Matrix<Scalar> delta_;
};

// Noise-prediction interface for the diffusion (DDIM) branch: eps_hat at a
// given cumulative signal level alpha_bar.
template <typename Scalar>
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Matrix<Scalar> predict_noise(const Matrix<Scalar>& x, Scalar alpha_bar) const = 0;
};

// Diagonal Gaussian mixture as data distribution. Under the forward process
// x = sqrt(a) x_data + sqrt(1 - a) eps each component becomes
// N(sqrt(a) m_k, a v_k + 1 - a), so the score is closed form and
// eps_hat = -sqrt(1 - a) * grad log q_a(x).
template <typename Scalar>
class GaussianMixtureScore final : public NoisePredictor<Scalar> {
 public:
  GaussianMixtureScore(Vector<Scalar> weights, Matrix<Scalar> means, Matrix<Scalar> variances,
                       std::vector<double> alphas_bar = {})
      : weights_(std::move(weights)),
        means_(std::move(means)),
        variances_(std::move(variances)),
        alphas_bar_(std::move(alphas_bar)) {
    const Eigen::Index k = weights_.size();
    if (k < 1 || means_.rows() != k || variances_.rows() != k || means_.cols() != variances_.cols())
      throw InvalidArgument("GaussianMixtureScore: inconsistent component shapes");
    if ((weights_.array() < Scalar(0)).any() || std::abs(static_cast<double>(weights_.sum()) - 1.0) > 1e-12)
      throw InvalidArgument("GaussianMixtureScore: weights must lie on the simplex");
    if (!(variances_.array() > Scalar(0)).all())
      throw InvalidArgument("GaussianMixtureScore: variances must be positive");
  }

  Eigen::Index dim() const { return means_.cols(); }
  Eigen::Index components() const { return weights_.size(); }
  const Vector<Scalar>& weights() const { return weights_; }
  const Matrix<Scalar>& means() const { return means_; }
  const Matrix<Scalar>& variances() const { return variances_; }
  const std::vector<double>& alphas_bar() const { return alphas_bar_; }

  // log q_a(x) per row.
  Vector<Scalar> log_density(const Matrix<Scalar>& x, Scalar alpha_bar) const {
    Vector<Scalar> out(x.rows());
    check(x, alpha_bar);
    Vector<Scalar> logs(components());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      component_logs(x.row(r), alpha_bar, logs);
      out(r) = log_sum_exp(logs);
    }
    return out;
  }

  // grad_x log q_a(x) per row, responsibility-weighted and log-sum-exp stabilised.
  Matrix<Scalar> score(const Matrix<Scalar>& x, Scalar alpha_bar) const {
    check(x, alpha_bar);
    const Eigen::Index k = components();
    const Scalar sa = std::sqrt(alpha_bar);
    Matrix<Scalar> out = Matrix<Scalar>::Zero(x.rows(), x.cols());
    Vector<Scalar> logs(k);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      component_logs(x.row(r), alpha_bar, logs);
      const Scalar top = logs.maxCoeff();
      if (!std::isfinite(static_cast<double>(top)))
        throw NumericalFailure("mixture_score: all component responsibilities underflowed at row " +
                               std::to_string(r));
      const Vector<Scalar> resp = (logs.array() - top).exp().matrix();
      const Scalar total = resp.sum();
      for (Eigen::Index c = 0; c < k; ++c) {
        const RowVector<Scalar> var = (alpha_bar * variances_.row(c)).array() + (Scalar(1) - alpha_bar);
        const RowVector<Scalar> centred = x.row(r) - sa * means_.row(c);
        out.row(r) -= (resp(c) / total) * (centred.array() / var.array()).matrix();
      }
    }
    return out;
  }

  Matrix<Scalar> predict_noise(const Matrix<Scalar>& x, Scalar alpha_bar) const override {
    return -std::sqrt(Scalar(1) - alpha_bar) * score(x, alpha_bar);
  }

  // eps_hat at step index t of the attached schedule.
  Matrix<Scalar> mixture_score(const Matrix<Scalar>& x, std::size_t t) const {
    if (t >= alphas_bar_.size()) throw ScheduleError("mixture_score: no schedule entry for step " + std::to_string(t));
    return predict_noise(x, Scalar(alphas_bar_[t]));
  }

  // Exact samples from the (un-noised) mixture.
  template <typename Rng>
  Matrix<Scalar> sample(Rng& rng, Eigen::Index n) const {
    Matrix<Scalar> out(n, dim());
    for (Eigen::Index r = 0; r < n; ++r) {
      const double u = rng.uniform();
      Eigen::Index c = 0;
      double acc = static_cast<double>(weights_(0));
      while (c + 1 < components() && u >= acc) acc += static_cast<double>(weights_(++c));
      for (Eigen::Index j = 0; j < dim(); ++j)
        out(r, j) = means_(c, j) + std::sqrt(variances_(c, j)) * Scalar(rng.gaussian());
    }
    return out;
  }

 private:
  void check(const Matrix<Scalar>& x, Scalar alpha_bar) const {
    if (x.cols() != dim()) throw InvalidArgument("GaussianMixtureScore: state dimension mismatch");
    if (!(alpha_bar > Scalar(0) && alpha_bar <= Scalar(1))) throw ScheduleError("alpha_bar must lie in (0, 1]");
  }

  template <typename Row>
  void component_logs(const Row& x, Scalar alpha_bar, Vector<Scalar>& logs) const {
    const Scalar sa = std::sqrt(alpha_bar);
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    for (Eigen::Index c = 0; c < components(); ++c) {
      Scalar acc = std::log(weights_(c));
      for (Eigen::Index j = 0; j < dim(); ++j) {
        const Scalar var = alpha_bar * variances_(c, j) + (Scalar(1) - alpha_bar);
        const Scalar diff = x(j) - sa * means_(c, j);
        acc -= Scalar(0.5) * (Scalar(kLog2Pi) + std::log(var) + diff * diff / var);
      }
      logs(c) = acc;
    }
  }

  static Scalar log_sum_exp(const Vector<Scalar>& logs) {
    const Scalar top = logs.maxCoeff();
    if (!std::isfinite(static_cast<double>(top))) return top;
    return top + std::log((logs.array() - top).exp().sum());
  }

  Vector<Scalar> weights_;
  Matrix<Scalar> means_;
  Matrix<Scalar> variances_;
  std::vector<double> alphas_bar_;
};

}  // namespace flowinv
