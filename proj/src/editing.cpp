#include "flowinv/editing.hpp"

#include "flowinv/io.hpp"
#include "flowinv/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flowinv {

void TokenFeatures::validate() const {
  if (matrix.rows() < 1) throw InvalidArgument("TokenFeatures: at least one token required");
  if (static_cast<std::size_t>(matrix.rows()) != prompt_tokens.size())
    throw InvalidArgument("TokenFeatures: row count " + std::to_string(matrix.rows()) + " differs from token count " +
                          std::to_string(prompt_tokens.size()));
}

QkvComponents QkvComponents::parse(const std::string& s) {
  QkvComponents c;
  for (char ch : s) {
    switch (ch) {
      case 'Q': case 'q': c.q = true; break;
      case 'K': case 'k': c.k = true; break;
      case 'V': case 'v': c.v = true; break;
      default: throw ConfigError("attention components must be a subset of QKV, got '" + s + "'");
    }
  }
  return c;
}

std::string QkvComponents::str() const {
  std::string s;
  if (q) s += 'Q';
  if (k) s += 'K';
  if (v) s += 'V';
  return s;
}

EditSpec EditSpec::make(TokenIds source, TokenIds target, double S_fraction,
                        std::optional<AttentionInjection> injection) {
  if (source.size() != target.size())
    throw InvalidArgument("EditSpec: source and target prompts differ in length (" + std::to_string(source.size()) +
                          " vs " + std::to_string(target.size()) + ")");
  EditSpec spec;
  for (std::size_t k = 0; k < source.size(); ++k)
    if (source[k] != target[k]) spec.edited_indices.push_back(static_cast<int>(k));
  spec.source_tokens = std::move(source);
  spec.target_tokens = std::move(target);
  spec.S_fraction = S_fraction;
  spec.attention_injection = injection;
  spec.validate();
  return spec;
}

void EditSpec::validate() const {
  if (source_tokens.size() != target_tokens.size())
    throw InvalidArgument("EditSpec: source and target prompts differ in length");
  std::vector<int> expected;
  for (std::size_t k = 0; k < source_tokens.size(); ++k)
    if (source_tokens[k] != target_tokens[k]) expected.push_back(static_cast<int>(k));
  if (expected != edited_indices) throw InvalidArgument("EditSpec: edited_indices do not match the prompt difference");
  if (!(S_fraction >= 0.0 && S_fraction <= 1.0)) throw InvalidArgument("EditSpec: S_fraction outside [0, 1]");
  if (attention_injection && !(attention_injection->fraction >= 0.0 && attention_injection->fraction <= 1.0))
    throw InvalidArgument("EditSpec: injection fraction outside [0, 1]");
  for (int b : map_blocks)
    if (b < 0) throw InvalidArgument("EditSpec: negative block index in map_blocks");
}

bool EditSpec::maps_block(int block) const {
  return map_blocks.empty() || std::find(map_blocks.begin(), map_blocks.end(), block) != map_blocks.end();
}

std::size_t active_steps(double fraction, std::size_t total) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("fraction outside [0, 1]");
  // The tiny offset keeps decimal fractions such as 0.29 * 100 from
  // flooring one step short.
  const double n = std::floor(fraction * static_cast<double>(total) + 1e-9);
  return std::min(total, static_cast<std::size_t>(n));
}

void adaln_map_rows(const MatrixXd& source, MatrixXd& target, const std::vector<int>& edited_indices,
                    Eigen::Index tokens_per_sample) {
  if (source.rows() != target.rows() || source.cols() != target.cols())
    throw InvalidArgument("adaln_map: source and target feature shapes differ");
  if (tokens_per_sample < 1 || source.rows() % tokens_per_sample != 0)
    throw InvalidArgument("adaln_map: row count is not a multiple of the prompt length");
  std::vector<bool> edited(static_cast<std::size_t>(tokens_per_sample), false);
  for (int k : edited_indices) {
    if (k < 0 || k >= tokens_per_sample) throw InvalidArgument("adaln_map: edited index out of range");
    edited[static_cast<std::size_t>(k)] = true;
  }
  for (Eigen::Index r = 0; r < source.rows(); ++r)
    if (!edited[static_cast<std::size_t>(r % tokens_per_sample)]) target.row(r) = source.row(r);
}

TokenFeatures adaln_map(const TokenFeatures& m_source, const TokenFeatures& m_target, const EditSpec& spec,
                        std::size_t step, std::size_t total) {
  m_source.validate();
  m_target.validate();
  if (m_source.matrix.rows() != m_target.matrix.rows() || m_source.matrix.cols() != m_target.matrix.cols())
    throw InvalidArgument("adaln_map: source and target feature shapes differ");
  TokenFeatures out = m_target;
  if (step < active_steps(spec.S_fraction, total))
    adaln_map_rows(m_source.matrix, out.matrix, spec.edited_indices, m_source.matrix.rows());
  return out;
}

void attention_inject(const QkvCache* source_cache, AttentionInputs& target, int block,
                      const QkvComponents& components, std::size_t step, std::size_t total, double tau,
                      bool include_text) {
  if (step >= active_steps(tau, total) || !components.any()) return;
  if (source_cache == nullptr || block < 0 || static_cast<std::size_t>(block) >= source_cache->blocks.size())
    throw StateError("attention_inject: no source cache for step " + std::to_string(step) + ", block " +
                     std::to_string(block));
  const AttentionInputs& src = source_cache->blocks[static_cast<std::size_t>(block)];
  auto copy = [](const MatrixXd& from, MatrixXd& to) {
    if (from.rows() != to.rows() || from.cols() != to.cols())
      throw InvalidArgument("attention_inject: cached and target shapes differ");
    to = from;
  };
  if (components.q) copy(src.q_data, target.q_data);
  if (components.k) copy(src.k_data, target.k_data);
  if (components.v) copy(src.v_data, target.v_data);
  if (include_text) {
    if (components.q) copy(src.q_text, target.q_text);
    if (components.k) copy(src.k_text, target.k_text);
    if (components.v) copy(src.v_text, target.v_text);
  }
}

const PassCache& DualBranchState::cache(std::size_t step, Pass pass) const {
  if (step >= source_cache.size() || !source_cache[step][static_cast<std::size_t>(pass)].present)
    throw StateError("no source cache for step " + std::to_string(step));
  return source_cache[step][static_cast<std::size_t>(pass)];
}

void save_cache_dump(const std::filesystem::path& path, const DualBranchState& state) {
  BinaryBlob blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto put = [&](std::size_t step, int pass, std::size_t block, const char* name, const MatrixXd& m) {
    tensors.push_back({{"step", step},
                       {"pass", pass == 0 ? "conditional" : "unconditional"},
                       {"block", block},
                       {"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"offset", blob.values.size()}});
    // Row-major within each tensor.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) blob.values.push_back(m(r, c));
  };
  for (std::size_t t = 0; t < state.source_cache.size(); ++t) {
    for (int pass = 0; pass < 2; ++pass) {
      const PassCache& pc = state.source_cache[t][static_cast<std::size_t>(pass)];
      if (!pc.present) continue;
      for (std::size_t b = 0; b < pc.text_features.size(); ++b) put(t, pass, b, "text_features", pc.text_features[b]);
      for (std::size_t b = 0; b < pc.qkv.blocks.size(); ++b) {
        const AttentionInputs& a = pc.qkv.blocks[b];
        put(t, pass, b, "q_text", a.q_text);
        put(t, pass, b, "k_text", a.k_text);
        put(t, pass, b, "v_text", a.v_text);
        put(t, pass, b, "q_data", a.q_data);
        put(t, pass, b, "k_data", a.k_data);
        put(t, pass, b, "v_data", a.v_data);
      }
    }
  }
  blob.header = {{"format", "flowinv-cache"}, {"version", 1}, {"layout", "row-major f64"}, {"tensors", tensors}};
  write_binary(path, blob);
}

// ---------------------------------------------------------------------------
// Dual-branch regeneration

namespace {

class CaptureHooks final : public ForwardHooks {
 public:
  CaptureHooks(PassCache& out, FeaturePoint point, int blocks) : out_(out), point_(point) {
    out_.text_features.assign(static_cast<std::size_t>(blocks), MatrixXd());
    out_.qkv.blocks.assign(static_cast<std::size_t>(blocks), AttentionInputs());
    out_.present = true;
  }
  FeaturePoint feature_point() const override { return point_; }
  void text_features(int block, MatrixXd& f) override { out_.text_features[static_cast<std::size_t>(block)] = f; }
  void attention_inputs(int block, AttentionInputs& qkv) override {
    out_.qkv.blocks[static_cast<std::size_t>(block)] = qkv;
  }

 private:
  PassCache& out_;
  FeaturePoint point_;
};

class EditHooks final : public ForwardHooks {
 public:
  EditHooks(const PassCache& src, const EditSpec& spec, const std::vector<int>& edited, Eigen::Index prompt_len,
            bool map_active, std::size_t step, std::size_t total)
      : src_(src), spec_(spec), edited_(edited), prompt_len_(prompt_len), map_active_(map_active), step_(step),
        total_(total) {}

  FeaturePoint feature_point() const override { return spec_.feature_point; }
  void text_features(int block, MatrixXd& f) override {
    if (!map_active_ || !spec_.maps_block(block)) return;
    adaln_map_rows(src_.text_features.at(static_cast<std::size_t>(block)), f, edited_, prompt_len_);
    mapped = true;
  }
  void attention_inputs(int block, AttentionInputs& qkv) override {
    if (!spec_.attention_injection) return;
    const AttentionInjection& inj = spec_.attention_injection.value();
    if (step_ >= active_steps(inj.fraction, total_) || !inj.components.any()) return;
    attention_inject(&src_.qkv, qkv, block, inj.components, step_, total_, inj.fraction, spec_.inject_text_tokens);
    injected = true;
  }

  bool mapped = false;
  bool injected = false;

 private:
  const PassCache& src_;
  const EditSpec& spec_;
  const std::vector<int>& edited_;
  Eigen::Index prompt_len_;
  bool map_active_;
  std::size_t step_;
  std::size_t total_;
};

// Same arithmetic as TrainableField::velocity, routed through the hooks.
MatrixXd pass_velocity(const MiniDiT& net, const MatrixXd& x, double sigma, const TokenIds* tokens,
                       ForwardHooks* hooks) {
  const Eigen::Index len = net.prompt_length();
  TokenMatrix tm(x.rows(), len);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index k = 0; k < len; ++k)
      tm(r, k) = tokens == nullptr ? net.null_token() : (*tokens)[static_cast<std::size_t>(k)];
  return net.forward(x, VectorXd::Constant(x.rows(), sigma), tm, hooks);
}

// Same recombination as cfg_velocity.
MatrixXd guided(const MiniDiT& net, const MatrixXd& x, double sigma, const TokenIds& tokens, double w,
                ForwardHooks* cond_hooks, ForwardHooks* uncond_hooks) {
  if (w == 1.0) return pass_velocity(net, x, sigma, &tokens, cond_hooks);
  const MatrixXd conditional = pass_velocity(net, x, sigma, &tokens, cond_hooks);
  const MatrixXd unconditional = pass_velocity(net, x, sigma, nullptr, uncond_hooks);
  return unconditional + w * (conditional - unconditional);
}

}  // namespace

double factor_a_error(const MatrixXd& edited, const MatrixXd& x1) {
  if (edited.rows() != x1.rows() || edited.cols() < 2 || x1.cols() < 2)
    throw InvalidArgument("factor_a_error: shape mismatch");
  return (edited.leftCols(2) - x1.leftCols(2)).rowwise().norm().mean();
}

double factor_b_attainment(const SyntheticDataset& data, const MatrixXd& edited, int target_token_b) {
  if (edited.cols() != 4) throw InvalidArgument("factor_b_attainment: expects 4-dimensional samples");
  const VectorXd b1 = data.condition_mean(kTokenA1, kTokenB1).tail(2);
  const VectorXd b2 = data.condition_mean(kTokenA1, kTokenB2).tail(2);
  const VectorXd want = target_token_b == kTokenB1 ? b1 : b2;
  const VectorXd other = target_token_b == kTokenB1 ? b2 : b1;
  if (target_token_b != kTokenB1 && target_token_b != kTokenB2)
    throw InvalidArgument("factor_b_attainment: target must be a factor-B token");
  Eigen::Index hits = 0;
  for (Eigen::Index r = 0; r < edited.rows(); ++r) {
    const VectorXd xb = edited.row(r).tail(2).transpose();
    if ((xb - want).squaredNorm() < (xb - other).squaredNorm()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(edited.rows());
}

EditResult edit_pipeline(const MiniDiT& net, const MatrixXd& x1, const EditSpec& spec, const TimeGrid& grid,
                         const FixedPointConfig& fp_cfg, double w_inv, double w_edit, const EditOptions& options,
                         const SyntheticDataset* data) {
  spec.validate();
  const Eigen::Index len = net.prompt_length();
  if (static_cast<Eigen::Index>(spec.source_tokens.size()) != len)
    throw InvalidArgument("edit_pipeline: prompt length " + std::to_string(spec.source_tokens.size()) +
                          " does not match model (" + std::to_string(len) + ")");
  for (int b : spec.map_blocks)
    if (b >= net.config().blocks) throw InvalidArgument("edit_pipeline: map block out of range");

  // Stage I and II under the source prompt.
  const Condition inv_cond{spec.source_tokens, w_inv};
  const Condition comp_cond{spec.source_tokens, options.compensation_guidance.value_or(w_edit)};
  InversionResult<double> inv = invert<double>(net, x1, grid, inv_cond, fp_cfg);
  inv = compute_compensations<double>(net, std::move(inv), comp_cond);

  const std::size_t T = grid.steps();
  const int blocks = net.config().blocks;
  const std::size_t map_until = active_steps(spec.S_fraction, T);
  const std::vector<int> no_rows_edited;

  EditResult res;
  DualBranchState& st = res.state;
  st.source_states.reserve(T + 1);
  st.target_states.reserve(T + 1);
  st.source_states.push_back(inv.noise());
  st.target_states.push_back(inv.noise());
  st.source_cache.resize(T);

  for (std::size_t t = 0; t < T; ++t) {
    const double sigma = grid.sigma(t);
    auto& caches = st.source_cache[t];
    CaptureHooks cap_c(caches[0], spec.feature_point, blocks);
    CaptureHooks cap_u(caches[1], spec.feature_point, blocks);
    const MatrixXd v_src = guided(net, st.source_states.back(), sigma, spec.source_tokens, w_edit, &cap_c, &cap_u);
    if (w_edit == 1.0) caches[1].present = false;

    const bool map_on = t < map_until;
    EditHooks ed_c(caches[0], spec, spec.edited_indices, len, map_on, t, T);
    EditHooks ed_u(caches[1], spec, no_rows_edited, len, map_on && spec.map_unconditional, t, T);
    const MatrixXd v_tgt = guided(net, st.target_states.back(), sigma, spec.target_tokens, w_edit, &ed_c, &ed_u);
    if (ed_c.mapped || ed_u.mapped) ++st.map_steps;
    if (ed_c.injected || ed_u.injected) ++st.injection_steps;

    MatrixXd next_src = st.source_states.back() + grid.delta(t) * v_src;
    next_src += inv.compensations[t];
    MatrixXd next_tgt = st.target_states.back() + grid.delta(t) * v_tgt;
    next_tgt += inv.compensations[t];
    if (!next_src.allFinite() || !next_tgt.allFinite())
      throw NumericalFailure("edit_pipeline: non-finite state at step " + std::to_string(t));
    st.source_states.push_back(std::move(next_src));
    st.target_states.push_back(std::move(next_tgt));
    if (!options.keep_caches) caches = {};
  }
  if (!options.keep_caches) st.source_cache.clear();

  res.reconstruction = st.source_states.back();
  res.edited = st.target_states.back();
  res.metrics.reconstruction_rel_err = relative_linf<double>(res.reconstruction, x1);
  res.metrics.displacement = (res.edited - res.reconstruction).rowwise().norm().mean();
  if (data != nullptr) {
    res.metrics.preservation_error = factor_a_error(res.edited, x1);
    int target_b = -1;
    for (int tok : spec.target_tokens)
      if (tok == kTokenB1 || tok == kTokenB2) target_b = tok;
    if (target_b >= 0) res.metrics.attainment = factor_b_attainment(*data, res.edited, target_b);
  }
  return res;
}

}  // namespace flowinv
