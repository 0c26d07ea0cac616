#pragma once

#include "flowinv/core.hpp"
#include "flowinv/fields.hpp"
#include "flowinv/params.hpp"
#include "flowinv/rng.hpp"

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace flowinv {

// Per-sample prompt tokens, one row per sample. Zero columns for
// unconditional models.
using TokenMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A velocity network trainable by least-squares regression with analytic
// gradients over a flat parameter vector.
class TrainableField : public VelocityField<double> {
 public:
  virtual std::string arch_name() const = 0;
  virtual nlohmann::json architecture() const = 0;
  virtual const ParameterLayout& layout() const = 0;

  const VectorXd& parameters() const { return params_; }
  VectorXd& parameters() { return params_; }
  void set_parameters(const VectorXd& p);

  virtual Eigen::Index data_dim() const = 0;
  virtual Eigen::Index prompt_length() const { return 0; }
  // Token used for every prompt position in the unconditional branch.
  virtual int null_token() const { return -1; }

  // Velocity for per-sample sigmas.
  virtual MatrixXd predict(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens) const = 0;

  // mean_b ||target_b - v_b||^2; `grad`, when non-null, receives d loss / d params.
  virtual double regression_loss(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens,
                                 const MatrixXd& target, VectorXd* grad) const = 0;

  MatrixXd velocity(const MatrixXd& x, double sigma, const TokenIds* tokens) const override;

 protected:
  TokenMatrix broadcast_tokens(Eigen::Index rows, const TokenIds* tokens) const;

  VectorXd params_;
};

struct MlpConfig {
  int data_dim = 2;
  int hidden = 64;
  int time_embed = 16;
};

// Two hidden SiLU layers on [x, fourier(sigma)].
class MlpField final : public TrainableField {
 public:
  explicit MlpField(MlpConfig cfg);
  MlpField(MlpConfig cfg, RngStream& init_rng);

  std::string arch_name() const override { return "mlp"; }
  nlohmann::json architecture() const override;
  const ParameterLayout& layout() const override { return layout_; }
  Eigen::Index data_dim() const override { return cfg_.data_dim; }
  const MlpConfig& config() const { return cfg_; }

  MatrixXd predict(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens) const override;
  double regression_loss(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens, const MatrixXd& target,
                         VectorXd* grad) const override;

 private:
  MlpConfig cfg_;
  ParameterLayout layout_;
  std::size_t w1_, b1_, w2_, b2_, w3_, b3_;
};

struct MiniDiTConfig {
  int vocab = 5;
  int null_token = 4;
  int text_len = 2;
  int data_tokens = 2;
  int patch_dim = 2;
  int hidden = 32;
  int ffn = 64;
  int blocks = 2;
  int time_embed = 16;

  int data_dim() const { return data_tokens * patch_dim; }
};

// Query/key/value of both streams for one block, rows sample-major
// (text: B*text_len x hidden, data: B*data_tokens x hidden).
struct AttentionInputs {
  MatrixXd q_text, k_text, v_text;
  MatrixXd q_data, k_data, v_data;
};

enum class FeaturePoint { post_modulation, pre_modulation };

// Capture/override points inside the forward pass. Overrides act in place.
class ForwardHooks {
 public:
  virtual ~ForwardHooks() = default;
  virtual FeaturePoint feature_point() const { return FeaturePoint::post_modulation; }
  // Text-token features entering attention (see feature_point()).
  virtual void text_features(int /*block*/, MatrixXd& /*features*/) {}
  virtual void attention_inputs(int /*block*/, AttentionInputs& /*qkv*/) {}
};

// Two-stream transformer: text and data tokens get separate AdaLN
// modulation (shift/scale/gate from the timestep embedding), separate
// projections, and one joint softmax attention over [text; data].
class MiniDiT final : public TrainableField {
 public:
  explicit MiniDiT(MiniDiTConfig cfg);
  MiniDiT(MiniDiTConfig cfg, RngStream& init_rng);

  std::string arch_name() const override { return "minidit"; }
  nlohmann::json architecture() const override;
  const ParameterLayout& layout() const override { return layout_; }
  Eigen::Index data_dim() const override { return cfg_.data_dim(); }
  Eigen::Index prompt_length() const override { return cfg_.text_len; }
  int null_token() const override { return cfg_.null_token; }
  bool is_conditional() const override { return true; }
  const MiniDiTConfig& config() const { return cfg_; }

  MatrixXd predict(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens) const override;
  MatrixXd forward(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens, ForwardHooks* hooks) const;
  double regression_loss(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens, const MatrixXd& target,
                         VectorXd* grad) const override;

  // Parameter ids, exposed for tests that poke at specific blocks.
  struct StreamParams {
    std::size_t mod_w, mod_b, wq, wk, wv, wo, bo, w1, b1, w2, b2;
  };
  struct BlockParams {
    StreamParams text, data;
  };
  struct Ids {
    std::size_t tok_emb, txt_pos, patch_w, patch_b, dat_pos;
    std::size_t time_w1, time_b1, time_w2, time_b2;
    std::vector<BlockParams> blocks;
    std::size_t final_mod_w, final_mod_b, head_w, head_b;
  };
  const Ids& ids() const { return ids_; }

 private:
  struct Cache;
  MatrixXd run(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix& tokens, ForwardHooks* hooks,
               Cache* cache) const;
  void backward(const Cache& cache, const TokenMatrix& tokens, const MatrixXd& d_out, VectorXd& grad) const;
  void check_tokens(const TokenMatrix& tokens, Eigen::Index rows) const;

  MiniDiTConfig cfg_;
  ParameterLayout layout_;
  Ids ids_;
};

std::unique_ptr<TrainableField> make_network(const nlohmann::json& architecture);

}  // namespace flowinv
