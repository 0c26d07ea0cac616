#include "flowinv/networks.hpp"

#include "nn_ops.hpp"

#include <cmath>
#include <string>

namespace flowinv {

using nn::fill_normal;

void TrainableField::set_parameters(const VectorXd& p) {
  if (p.size() != layout().size())
    throw InvalidArgument("parameter count " + std::to_string(p.size()) + " does not match architecture (" +
                          std::to_string(layout().size()) + ")");
  params_ = p;
}

TokenMatrix TrainableField::broadcast_tokens(Eigen::Index rows, const TokenIds* tokens) const {
  const Eigen::Index len = prompt_length();
  TokenMatrix out(rows, len);
  if (len == 0) return out;
  if (tokens == nullptr) {
    out.setConstant(null_token());
    return out;
  }
  if (static_cast<Eigen::Index>(tokens->size()) != len)
    throw InvalidArgument("prompt length " + std::to_string(tokens->size()) + " does not match model (" +
                          std::to_string(len) + ")");
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index k = 0; k < len; ++k) out(r, k) = (*tokens)[static_cast<std::size_t>(k)];
  return out;
}

MatrixXd TrainableField::velocity(const MatrixXd& x, double sigma, const TokenIds* tokens) const {
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw InvalidArgument("sigma outside [0, 1]");
  return predict(x, VectorXd::Constant(x.rows(), sigma), broadcast_tokens(x.rows(), tokens));
}

// ---------------------------------------------------------------------------
// MLP

MlpField::MlpField(MlpConfig cfg) : cfg_(cfg) {
  if (cfg_.data_dim < 1 || cfg_.hidden < 1) throw InvalidArgument("MlpField: invalid sizes");
  const Eigen::Index in = cfg_.data_dim + cfg_.time_embed;
  w1_ = layout_.add("w1", in, cfg_.hidden);
  b1_ = layout_.add("b1", 1, cfg_.hidden);
  w2_ = layout_.add("w2", cfg_.hidden, cfg_.hidden);
  b2_ = layout_.add("b2", 1, cfg_.hidden);
  w3_ = layout_.add("w3", cfg_.hidden, cfg_.data_dim);
  b3_ = layout_.add("b3", 1, cfg_.data_dim);
  params_ = VectorXd::Zero(layout_.size());
}

MlpField::MlpField(MlpConfig cfg, RngStream& rng) : MlpField(cfg) {
  const double in = static_cast<double>(cfg_.data_dim + cfg_.time_embed);
  fill_normal(layout_.view(params_, w1_), rng, 1.0 / std::sqrt(in));
  fill_normal(layout_.view(params_, w2_), rng, 1.0 / std::sqrt(static_cast<double>(cfg_.hidden)));
  fill_normal(layout_.view(params_, w3_), rng, 1.0 / std::sqrt(static_cast<double>(cfg_.hidden)));
}

nlohmann::json MlpField::architecture() const {
  return {{"arch", "mlp"}, {"data_dim", cfg_.data_dim}, {"hidden", cfg_.hidden}, {"time_embed", cfg_.time_embed}};
}

namespace {

struct MlpActivations {
  MatrixXd input, z1, a1, z2, a2, out;
};

}  // namespace

MatrixXd MlpField::predict(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix&) const {
  if (x.cols() != cfg_.data_dim) throw InvalidArgument("MlpField: state dimension mismatch");
  if (sigmas.size() != x.rows()) throw InvalidArgument("MlpField: one sigma per row required");
  MatrixXd input(x.rows(), cfg_.data_dim + cfg_.time_embed);
  input << x, time_embedding(sigmas, cfg_.time_embed);
  const MatrixXd a1 = silu((input * layout_.view(params_, w1_)).rowwise() + layout_.row(params_, b1_));
  const MatrixXd a2 = silu((a1 * layout_.view(params_, w2_)).rowwise() + layout_.row(params_, b2_));
  return (a2 * layout_.view(params_, w3_)).rowwise() + layout_.row(params_, b3_);
}

double MlpField::regression_loss(const MatrixXd& x, const VectorXd& sigmas, const TokenMatrix&,
                                 const MatrixXd& target, VectorXd* grad) const {
  if (x.cols() != cfg_.data_dim || target.rows() != x.rows() || target.cols() != x.cols())
    throw InvalidArgument("MlpField: batch shape mismatch");
  if (sigmas.size() != x.rows()) throw InvalidArgument("MlpField: one sigma per row required");
  MlpActivations act;
  act.input.resize(x.rows(), cfg_.data_dim + cfg_.time_embed);
  act.input << x, time_embedding(sigmas, cfg_.time_embed);
  act.z1 = (act.input * layout_.view(params_, w1_)).rowwise() + layout_.row(params_, b1_);
  act.a1 = silu(act.z1);
  act.z2 = (act.a1 * layout_.view(params_, w2_)).rowwise() + layout_.row(params_, b2_);
  act.a2 = silu(act.z2);
  act.out = (act.a2 * layout_.view(params_, w3_)).rowwise() + layout_.row(params_, b3_);

  const double batch = static_cast<double>(x.rows());
  const MatrixXd residual = act.out - target;
  const double loss = residual.squaredNorm() / batch;
  if (grad == nullptr) return loss;

  grad->setZero(layout_.size());
  const MatrixXd d_out = (2.0 / batch) * residual;
  layout_.view(*grad, w3_) = act.a2.transpose() * d_out;
  layout_.row(*grad, b3_) = d_out.colwise().sum();
  const MatrixXd d_z2 = (d_out * layout_.view(params_, w3_).transpose()).cwiseProduct(silu_grad(act.z2));
  layout_.view(*grad, w2_) = act.a1.transpose() * d_z2;
  layout_.row(*grad, b2_) = d_z2.colwise().sum();
  const MatrixXd d_z1 = (d_z2 * layout_.view(params_, w2_).transpose()).cwiseProduct(silu_grad(act.z1));
  layout_.view(*grad, w1_) = act.input.transpose() * d_z1;
  layout_.row(*grad, b1_) = d_z1.colwise().sum();
  return loss;
}

namespace {

void check_keys(const nlohmann::json& a, std::initializer_list<const char*> allowed) {
  for (auto it = a.begin(); it != a.end(); ++it) {
    bool ok = it.key() == "arch";
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown architecture key '" + it.key() + "'");
  }
}

}  // namespace

std::unique_ptr<TrainableField> make_network(const nlohmann::json& a) {
  if (!a.is_object() || !a.contains("arch")) throw ConfigError("architecture must be an object with an 'arch' key");
  const std::string arch = a.at("arch").get<std::string>();
  if (arch == "mlp") check_keys(a, {"data_dim", "hidden", "time_embed"});
  if (arch == "minidit")
    check_keys(a, {"vocab", "null_token", "text_len", "data_tokens", "patch_dim", "hidden", "ffn", "blocks", "time_embed"});
  if (arch == "mlp") {
    MlpConfig cfg;
    cfg.data_dim = a.value("data_dim", cfg.data_dim);
    cfg.hidden = a.value("hidden", cfg.hidden);
    cfg.time_embed = a.value("time_embed", cfg.time_embed);
    return std::make_unique<MlpField>(cfg);
  }
  if (arch == "minidit") {
    MiniDiTConfig cfg;
    cfg.vocab = a.value("vocab", cfg.vocab);
    cfg.null_token = a.value("null_token", cfg.null_token);
    cfg.text_len = a.value("text_len", cfg.text_len);
    cfg.data_tokens = a.value("data_tokens", cfg.data_tokens);
    cfg.patch_dim = a.value("patch_dim", cfg.patch_dim);
    cfg.hidden = a.value("hidden", cfg.hidden);
    cfg.ffn = a.value("ffn", cfg.ffn);
    cfg.blocks = a.value("blocks", cfg.blocks);
    cfg.time_embed = a.value("time_embed", cfg.time_embed);
    return std::make_unique<MiniDiT>(cfg);
  }
  throw ConfigError("unknown architecture '" + arch + "'");
}

}  // namespace flowinv
