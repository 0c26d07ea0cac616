#pragma once

#include "flowinv/core.hpp"
#include "flowinv/networks.hpp"
#include "flowinv/rng.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace flowinv {

enum class Optimizer { sgd, momentum, adam };
Optimizer parse_optimizer(const std::string& name);
std::string to_string(Optimizer o);

struct TrainConfig {
  int batch = 256;
  int steps = 5000;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  std::uint64_t seed = 0;
  std::string dataset = "gaussian";
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Probability of replacing a sample's prompt by the null prompt
  // (conditional models only).
  double cfg_dropout = 0.1;
  // Linear decay of the step size to lr * lr_final_fraction.
  double lr_final_fraction = 1.0;
  // Reuse a single batch (x0, x1, t, prompts) for every step.
  bool fixed_batch = false;
  // Warn when the mean loss of the last `tail` steps exceeds this; < 0
  // picks the dataset default.
  double loss_threshold = -1.0;
  int tail = 100;

  void validate() const;
};

// Two-factor token ids. kNullToken fills every prompt position in the
// unconditional branch.
inline constexpr int kTokenA1 = 0;
inline constexpr int kTokenA2 = 1;
inline constexpr int kTokenB1 = 2;
inline constexpr int kTokenB2 = 3;
inline constexpr int kNullToken = 4;

enum class DatasetKind { gaussian, gmm2d, two_factor };
DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind k);

struct DataBatch {
  MatrixXd x;
  TokenMatrix tokens;  // zero columns for unconditional data
};

// Samples from a fixed synthetic target. Parameters:
//   gaussian:   mean (vector), std (scalar), dim
//   gmm2d:      weights, means (K x 2), stds (K)
//   two_factor: factor_a_means, factor_b_means (2 x 2 each), std
class SyntheticDataset {
 public:
  SyntheticDataset(DatasetKind kind, const nlohmann::json& params, std::uint64_t seed);

  DatasetKind kind() const { return kind_; }
  Eigen::Index data_dim() const;
  Eigen::Index prompt_length() const { return kind_ == DatasetKind::two_factor ? 2 : 0; }
  // Fully resolved parameters (defaults filled in).
  const nlohmann::json& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  // Draw from the bound stream.
  DataBatch draw(Eigen::Index n) { return sample(stream_, n); }
  DataBatch sample(RngStream& rng, Eigen::Index n) const;
  // two_factor only: samples with a fixed prompt (token_a, token_b).
  MatrixXd sample_condition(RngStream& rng, Eigen::Index n, int token_a, int token_b) const;
  // two_factor only: mean of the 4-vector for the prompt.
  VectorXd condition_mean(int token_a, int token_b) const;

  // gaussian only.
  VectorXd mean() const;
  double std_dev() const;

 private:
  DatasetKind kind_;
  nlohmann::json params_;
  std::uint64_t seed_;
  RngStream stream_;
  // gmm2d / two_factor caches
  VectorXd weights_;
  MatrixXd means_;
  VectorXd stds_;
};

SyntheticDataset make_dataset(const std::string& kind, const nlohmann::json& params, std::uint64_t seed);

// Rectified-flow regression loss on one batch: x_t = t x1 + (1 - t) x0,
// target x1 - x0. Throws NumericalFailure naming the first bad sample.
double rf_loss(const TrainableField& net, const MatrixXd& x0, const MatrixXd& x1, const VectorXd& t,
               const TokenMatrix& tokens, VectorXd* grad);

struct Checkpoint {
  nlohmann::json architecture;
  VectorXd parameters;
  nlohmann::json metadata;  // steps, final_loss, seed, dataset, warning
  std::vector<double> loss_curve;

  std::unique_ptr<TrainableField> network() const;
};

// Builds a freshly initialised network for `architecture`.
std::unique_ptr<TrainableField> init_network(const nlohmann::json& architecture, RngStream& rng);

Checkpoint train_field(const nlohmann::json& architecture, const TrainConfig& cfg, SyntheticDataset& data);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Default warning threshold on the tail-mean training loss; 1.1 x the
// Bayes-optimal loss for Gaussian targets.
double default_loss_threshold(const SyntheticDataset& data);

}  // namespace flowinv
