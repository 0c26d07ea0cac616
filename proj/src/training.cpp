#include "flowinv/training.hpp"

#include "flowinv/io.hpp"
#include "flowinv/numerics.hpp"

#include <cmath>
#include <string>

namespace flowinv {

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "momentum") return Optimizer::momentum;
  if (name == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd, momentum or adam)");
}

std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::sgd: return "sgd";
    case Optimizer::momentum: return "momentum";
    case Optimizer::adam: return "adam";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("train.batch must be positive");
  if (steps < 1) throw ConfigError("train.steps must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and non-negative");
  if (!(cfg_dropout >= 0.0 && cfg_dropout <= 1.0)) throw ConfigError("train.cfg_dropout must lie in [0, 1]");
  if (!(lr_final_fraction >= 0.0 && lr_final_fraction <= 1.0))
    throw ConfigError("train.lr_final_fraction must lie in [0, 1]");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train.beta1/beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (tail < 1) throw ConfigError("train.tail must be positive");
}

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "gaussian") return DatasetKind::gaussian;
  if (name == "gmm2d") return DatasetKind::gmm2d;
  if (name == "two_factor") return DatasetKind::two_factor;
  throw ConfigError("unknown dataset kind '" + name + "' (expected gaussian, gmm2d or two_factor)");
}

std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gaussian: return "gaussian";
    case DatasetKind::gmm2d: return "gmm2d";
    case DatasetKind::two_factor: return "two_factor";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

MatrixXd json_matrix(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw InvalidArgument(what + " must be a non-empty array of rows");
  const std::size_t cols = j.at(0).size();
  MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw InvalidArgument(what + " rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

VectorXd json_vector(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw InvalidArgument(what + " must be a non-empty array");
  VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

nlohmann::json to_json(const MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

void reject_unknown(const nlohmann::json& params, std::initializer_list<const char*> allowed, const std::string& kind) {
  for (auto it = params.begin(); it != params.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown " + kind + " dataset parameter '" + it.key() + "'");
  }
}

}  // namespace

SyntheticDataset::SyntheticDataset(DatasetKind kind, const nlohmann::json& params, std::uint64_t seed)
    : kind_(kind), seed_(seed), stream_(seed) {
  const nlohmann::json p = params.is_null() ? nlohmann::json::object() : params;
  if (!p.is_object()) throw InvalidArgument("dataset parameters must be an object");
  switch (kind_) {
    case DatasetKind::gaussian: {
      reject_unknown(p, {"dim", "mean", "std"}, "gaussian");
      const int dim = p.value("dim", 2);
      if (dim < 1) throw InvalidArgument("gaussian dim must be positive");
      VectorXd mean = VectorXd::Constant(dim, 2.0);
      if (p.contains("mean")) {
        if (p["mean"].is_number()) {
          mean.setConstant(p["mean"].get<double>());
        } else {
          mean = json_vector(p["mean"], "gaussian mean");
          if (mean.size() != dim) throw InvalidArgument("gaussian mean length must equal dim");
        }
      }
      const double s = p.value("std", 0.5);
      if (!(s > 0.0)) throw InvalidArgument("gaussian std must be positive");
      means_ = mean.transpose();
      stds_ = VectorXd::Constant(1, s);
      weights_ = VectorXd::Ones(1);
      params_ = {{"dim", dim}, {"mean", std::vector<double>(mean.data(), mean.data() + dim)}, {"std", s}};
      break;
    }
    case DatasetKind::gmm2d: {
      reject_unknown(p, {"weights", "means", "stds"}, "gmm2d");
      weights_ = p.contains("weights") ? json_vector(p["weights"], "gmm2d weights") : VectorXd::Constant(2, 0.5);
      means_ = p.contains("means") ? json_matrix(p["means"], "gmm2d means")
                                   : MatrixXd((MatrixXd(2, 2) << -1.5, 0.0, 1.5, 0.0).finished());
      stds_ = p.contains("stds") ? json_vector(p["stds"], "gmm2d stds") : VectorXd::Constant(means_.rows(), 0.3);
      if (means_.cols() != 2) throw InvalidArgument("gmm2d means must have 2 columns");
      if (weights_.size() != means_.rows() || stds_.size() != means_.rows())
        throw InvalidArgument("gmm2d weights, means and stds must have the same count");
      if ((weights_.array() < 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-12)
        throw InvalidArgument("gmm2d weights must be non-negative and sum to 1");
      if (!(stds_.array() > 0.0).all()) throw InvalidArgument("gmm2d stds must be positive");
      params_ = {{"weights", std::vector<double>(weights_.data(), weights_.data() + weights_.size())},
                 {"means", to_json(means_)},
                 {"stds", std::vector<double>(stds_.data(), stds_.data() + stds_.size())}};
      break;
    }
    case DatasetKind::two_factor: {
      reject_unknown(p, {"factor_a_means", "factor_b_means", "std"}, "two_factor");
      const MatrixXd a = p.contains("factor_a_means") ? json_matrix(p["factor_a_means"], "factor_a_means")
                                                      : MatrixXd((MatrixXd(2, 2) << 1.0, 1.0, -1.0, -1.0).finished());
      const MatrixXd b = p.contains("factor_b_means") ? json_matrix(p["factor_b_means"], "factor_b_means")
                                                      : MatrixXd((MatrixXd(2, 2) << 1.0, -1.0, -1.0, 1.0).finished());
      if (a.rows() != 2 || a.cols() != 2 || b.rows() != 2 || b.cols() != 2)
        throw InvalidArgument("two_factor factor means must be 2 x 2");
      const double s = p.value("std", 0.1);
      if (!(s > 0.0)) throw InvalidArgument("two_factor std must be positive");
      // Rows 0-1: factor A means (a1, a2); rows 2-3: factor B means (b1, b2).
      means_.resize(4, 2);
      means_ << a, b;
      stds_ = VectorXd::Constant(1, s);
      params_ = {{"factor_a_means", to_json(a)}, {"factor_b_means", to_json(b)}, {"std", s}};
      break;
    }
  }
}

Eigen::Index SyntheticDataset::data_dim() const {
  switch (kind_) {
    case DatasetKind::gaussian: return means_.cols();
    case DatasetKind::gmm2d: return 2;
    case DatasetKind::two_factor: return 4;
  }
  return 0;
}

DataBatch SyntheticDataset::sample(RngStream& rng, Eigen::Index n) const {
  if (n < 1) throw InvalidArgument("dataset sample count must be positive");
  DataBatch out;
  out.x.resize(n, data_dim());
  out.tokens.resize(n, prompt_length());
  switch (kind_) {
    case DatasetKind::gaussian:
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < out.x.cols(); ++j) out.x(i, j) = means_(0, j) + stds_(0) * rng.gaussian();
      break;
    case DatasetKind::gmm2d:
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = rng.uniform();
        Eigen::Index k = 0;
        double acc = weights_(0);
        while (u >= acc && k + 1 < weights_.size()) acc += weights_(++k);
        for (Eigen::Index j = 0; j < 2; ++j) out.x(i, j) = means_(k, j) + stds_(k) * rng.gaussian();
      }
      break;
    case DatasetKind::two_factor:
      for (Eigen::Index i = 0; i < n; ++i) {
        const int ta = kTokenA1 + static_cast<int>(rng.below(2));
        const int tb = kTokenB1 + static_cast<int>(rng.below(2));
        out.tokens(i, 0) = ta;
        out.tokens(i, 1) = tb;
        const VectorXd m = condition_mean(ta, tb);
        for (Eigen::Index j = 0; j < 4; ++j) out.x(i, j) = m(j) + stds_(0) * rng.gaussian();
      }
      break;
  }
  return out;
}

VectorXd SyntheticDataset::condition_mean(int token_a, int token_b) const {
  if (kind_ != DatasetKind::two_factor) throw StateError("condition_mean requires a two_factor dataset");
  if (token_a != kTokenA1 && token_a != kTokenA2) throw InvalidArgument("factor A token must be a1 or a2");
  if (token_b != kTokenB1 && token_b != kTokenB2) throw InvalidArgument("factor B token must be b1 or b2");
  VectorXd m(4);
  m << means_.row(token_a - kTokenA1).transpose(), means_.row(2 + token_b - kTokenB1).transpose();
  return m;
}

MatrixXd SyntheticDataset::sample_condition(RngStream& rng, Eigen::Index n, int token_a, int token_b) const {
  const VectorXd m = condition_mean(token_a, token_b);
  if (n < 1) throw InvalidArgument("dataset sample count must be positive");
  MatrixXd x(n, 4);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = m(j) + stds_(0) * rng.gaussian();
  return x;
}

VectorXd SyntheticDataset::mean() const {
  if (kind_ != DatasetKind::gaussian) throw StateError("mean() requires a gaussian dataset");
  return means_.row(0).transpose();
}

double SyntheticDataset::std_dev() const {
  if (kind_ != DatasetKind::gaussian) throw StateError("std_dev() requires a gaussian dataset");
  return stds_(0);
}

SyntheticDataset make_dataset(const std::string& kind, const nlohmann::json& params, std::uint64_t seed) {
  return SyntheticDataset(parse_dataset_kind(kind), params, seed);
}

// ---------------------------------------------------------------------------
// Loss and training

double rf_loss(const TrainableField& net, const MatrixXd& x0, const MatrixXd& x1, const VectorXd& t,
               const TokenMatrix& tokens, VectorXd* grad) {
  if (x0.rows() < 1) throw InvalidArgument("rf_loss: empty batch");
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols() || t.size() != x0.rows())
    throw InvalidArgument("rf_loss: batch shape mismatch");
  const MatrixXd xt = (t.asDiagonal() * x1) + ((1.0 - t.array()).matrix().asDiagonal() * x0);
  const MatrixXd target = x1 - x0;
  const double loss = net.regression_loss(xt, t, tokens, target, grad);
  if (!std::isfinite(loss) || (grad != nullptr && !grad->allFinite())) {
    const MatrixXd v = net.predict(xt, t, tokens);
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (!v.row(i).allFinite() || !xt.row(i).allFinite())
        throw NumericalFailure("rf_loss: non-finite velocity at batch index " + std::to_string(i));
    throw NumericalFailure("rf_loss: non-finite loss or gradient");
  }
  return loss;
}

std::unique_ptr<TrainableField> init_network(const nlohmann::json& architecture, RngStream& rng) {
  const std::string arch = architecture.at("arch").get<std::string>();
  const auto shape = make_network(architecture);  // validates and fills defaults
  if (arch == "mlp") return std::make_unique<MlpField>(static_cast<const MlpField&>(*shape).config(), rng);
  return std::make_unique<MiniDiT>(static_cast<const MiniDiT&>(*shape).config(), rng);
}

std::unique_ptr<TrainableField> Checkpoint::network() const {
  auto net = make_network(architecture);
  net->set_parameters(parameters);
  return net;
}

namespace {

// Bayes-optimal loss for an isotropic Gaussian target N(m, s^2 I) from
// N(0, I): d * int_0^1 [s^2 + 1 - (t s^2 - (1 - t))^2 / (t^2 s^2 + (1 - t)^2)] dt.
double gaussian_loss_floor(double s, Eigen::Index dim) {
  const int n = 2000;  // composite Simpson
  auto f = [s](double t) {
    const double c = t * s * s - (1.0 - t);
    return s * s + 1.0 - c * c / (t * t * s * s + (1.0 - t) * (1.0 - t));
  };
  double acc = f(0.0) + f(1.0);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(static_cast<double>(i) / n);
  return static_cast<double>(dim) * acc / (3.0 * n);
}

struct Draw {
  MatrixXd x0, x1;
  VectorXd t;
  TokenMatrix tokens;
};

Draw draw_batch(const TrainConfig& cfg, SyntheticDataset& data, RngStream& noise_rng, RngStream& drop_rng,
                bool conditional, int null_token) {
  Draw d;
  DataBatch b = data.draw(cfg.batch);
  d.x1 = std::move(b.x);
  d.tokens = std::move(b.tokens);
  d.x0 = gaussian_sample(noise_rng, cfg.batch, d.x1.cols());
  d.t.resize(cfg.batch);
  for (Eigen::Index i = 0; i < cfg.batch; ++i) d.t(i) = noise_rng.uniform();
  if (conditional)
    for (Eigen::Index i = 0; i < cfg.batch; ++i)
      if (drop_rng.uniform() < cfg.cfg_dropout) d.tokens.row(i).setConstant(null_token);
  return d;
}

}  // namespace

double default_loss_threshold(const SyntheticDataset& data) {
  switch (data.kind()) {
    case DatasetKind::gaussian: return 1.1 * gaussian_loss_floor(data.std_dev(), data.data_dim());
    case DatasetKind::gmm2d: return 2.0;
    case DatasetKind::two_factor: return 1.0;
  }
  return 0.0;
}

Checkpoint train_field(const nlohmann::json& architecture, const TrainConfig& cfg, SyntheticDataset& data) {
  cfg.validate();
  RngStream root(cfg.seed);
  RngStream init_rng = root.split();
  RngStream noise_rng = root.split();
  RngStream drop_rng = root.split();

  auto net = init_network(architecture, init_rng);
  if (net->data_dim() != data.data_dim())
    throw ConfigError("network data_dim " + std::to_string(net->data_dim()) + " does not match dataset (" +
                      std::to_string(data.data_dim()) + ")");
  if (net->prompt_length() != data.prompt_length())
    throw ConfigError("network prompt length does not match dataset");
  const bool conditional = net->prompt_length() > 0;

  VectorXd& p = net->parameters();
  const Eigen::Index n = p.size();
  VectorXd m1 = VectorXd::Zero(n);
  VectorXd m2 = VectorXd::Zero(n);
  VectorXd grad(n);

  Checkpoint ck;
  ck.loss_curve.reserve(static_cast<std::size_t>(cfg.steps));
  Draw fixed;
  if (cfg.fixed_batch) fixed = draw_batch(cfg, data, noise_rng, drop_rng, conditional, net->null_token());

  double b1_pow = 1.0;
  double b2_pow = 1.0;
  for (int step = 0; step < cfg.steps; ++step) {
    Draw fresh;
    if (!cfg.fixed_batch) fresh = draw_batch(cfg, data, noise_rng, drop_rng, conditional, net->null_token());
    const Draw& d = cfg.fixed_batch ? fixed : fresh;
    double loss = 0.0;
    try {
      loss = rf_loss(*net, d.x0, d.x1, d.t, d.tokens, &grad);
    } catch (const NumericalFailure& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    ck.loss_curve.push_back(loss);

    const double frac = cfg.steps > 1 ? static_cast<double>(step) / (cfg.steps - 1) : 0.0;
    const double lr = cfg.lr * (1.0 - (1.0 - cfg.lr_final_fraction) * frac);
    switch (cfg.optimizer) {
      case Optimizer::sgd:
        p -= lr * grad;
        break;
      case Optimizer::momentum:
        m1 = cfg.momentum * m1 + grad;
        p -= lr * m1;
        break;
      case Optimizer::adam: {
        b1_pow *= cfg.beta1;
        b2_pow *= cfg.beta2;
        m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
        m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 / (1.0 - b1_pow);
        const double c2 = 1.0 / (1.0 - b2_pow);
        p.array() -= lr * (m1.array() * c1) / ((m2.array() * c2).sqrt() + cfg.adam_eps);
        break;
      }
    }
    if (!p.allFinite()) throw DivergenceError("training diverged at step " + std::to_string(step) + ": parameters");
  }

  const std::size_t tail = std::min<std::size_t>(static_cast<std::size_t>(cfg.tail), ck.loss_curve.size());
  double tail_mean = 0.0;
  for (std::size_t i = ck.loss_curve.size() - tail; i < ck.loss_curve.size(); ++i) tail_mean += ck.loss_curve[i];
  tail_mean /= static_cast<double>(tail);

  double threshold = cfg.loss_threshold;
  if (threshold < 0.0) {
    threshold = default_loss_threshold(data);
  }

  ck.architecture = net->architecture();
  ck.parameters = p;
  ck.metadata = {{"steps", cfg.steps},
                 {"final_loss", tail_mean},
                 {"loss_threshold", threshold},
                 {"warning", tail_mean > threshold},
                 {"seed", cfg.seed},
                 {"dataset", to_string(data.kind())},
                 {"dataset_params", data.params()},
                 {"optimizer", to_string(cfg.optimizer)},
                 {"lr", cfg.lr},
                 {"batch", cfg.batch}};
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  BinaryBlob blob;
  blob.header = {{"format", "flowinv-checkpoint"},
                 {"version", 1},
                 {"architecture", ckpt.architecture},
                 {"metadata", ckpt.metadata},
                 {"parameter_count", ckpt.parameters.size()}};
  blob.values.assign(ckpt.parameters.data(), ckpt.parameters.data() + ckpt.parameters.size());
  write_binary(path, blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  BinaryBlob blob = read_binary(path);
  if (blob.header.value("format", "") != "flowinv-checkpoint")
    throw Error(path.string() + " is not a flowinv checkpoint");
  Checkpoint ck;
  ck.architecture = blob.header.at("architecture");
  ck.metadata = blob.header.value("metadata", nlohmann::json::object());
  ck.parameters = Eigen::Map<const VectorXd>(blob.values.data(), static_cast<Eigen::Index>(blob.values.size()));
  const auto net = make_network(ck.architecture);
  if (net->layout().size() != ck.parameters.size())
    throw Error("checkpoint " + path.string() + " has " + std::to_string(ck.parameters.size()) +
                " parameters, architecture expects " + std::to_string(net->layout().size()));
  return ck;
}

}  // namespace flowinv
