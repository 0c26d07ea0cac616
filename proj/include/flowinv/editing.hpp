#pragma once

#include "flowinv/core.hpp"
#include "flowinv/inversion.hpp"
#include "flowinv/networks.hpp"
#include "flowinv/samplers.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace flowinv {

class SyntheticDataset;

// Features of one prompt: one row per token.
struct TokenFeatures {
  MatrixXd matrix;
  TokenIds prompt_tokens;

  void validate() const;
};

struct QkvComponents {
  bool q = false;
  bool k = false;
  bool v = false;

  bool any() const { return q || k || v; }
  // Parses a subset of "QKV", e.g. "V" or "QK".
  static QkvComponents parse(const std::string& s);
  std::string str() const;
};

struct AttentionInjection {
  QkvComponents components;
  double fraction = 0.0;  // tau
};

struct EditSpec {
  TokenIds source_tokens;
  TokenIds target_tokens;
  std::vector<int> edited_indices;  // positions where the prompts differ
  double S_fraction = 0.6;
  std::optional<AttentionInjection> attention_injection;

  // Replacement point and scope of the Map.
  FeaturePoint feature_point = FeaturePoint::post_modulation;
  std::vector<int> map_blocks;  // empty: every block
  // Map the unconditional pass as well (all of its rows come from the source).
  bool map_unconditional = true;
  // Attention injection also overrides text-token rows.
  bool inject_text_tokens = false;

  // Fills edited_indices from the prompts.
  static EditSpec make(TokenIds source, TokenIds target, double S_fraction,
                       std::optional<AttentionInjection> injection = std::nullopt);
  void validate() const;
  bool maps_block(int block) const;
};

// Number of leading steps with step < floor(fraction * total).
std::size_t active_steps(double fraction, std::size_t total);

// Row k from the source for unedited tokens and from the target for edited
// ones while step < floor(S * T); the target unchanged afterwards.
TokenFeatures adaln_map(const TokenFeatures& m_source, const TokenFeatures& m_target, const EditSpec& spec,
                        std::size_t step, std::size_t total);

// Batched form over sample-major rows (B * j x d); edits `target` in place.
void adaln_map_rows(const MatrixXd& source, MatrixXd& target, const std::vector<int>& edited_indices,
                    Eigen::Index tokens_per_sample);

// Per-block attention inputs captured from the source branch.
struct QkvCache {
  std::vector<AttentionInputs> blocks;
};

// Overrides the selected components of `target` with the cache while
// step < floor(tau * T). Text rows are replaced only when `include_text`.
// A null cache while the injection is active is a StateError.
void attention_inject(const QkvCache* source_cache, AttentionInputs& target, int block,
                      const QkvComponents& components, std::size_t step, std::size_t total, double tau,
                      bool include_text = false);

enum class Pass { conditional = 0, unconditional = 1 };

// Source-branch captures for one step and one guidance pass.
struct PassCache {
  std::vector<MatrixXd> text_features;  // per block, B * j x d
  QkvCache qkv;
  bool present = false;
};

struct DualBranchState {
  std::vector<MatrixXd> source_states;  // grid nodes 0..T
  std::vector<MatrixXd> target_states;
  std::vector<std::array<PassCache, 2>> source_cache;  // per step, per pass
  // Steps where the Map / the injection actually fired (instrumentation).
  std::size_t map_steps = 0;
  std::size_t injection_steps = 0;

  const PassCache& cache(std::size_t step, Pass pass) const;
};

// Per-layer source caches as a binary blob (little-endian f64 block, JSON
// header listing every tensor's step, pass, block, name, rows, cols and
// offset in values).
void save_cache_dump(const std::filesystem::path& path, const DualBranchState& state);

struct EditOptions {
  // Guidance used when computing compensations under the source prompt.
  // Both branches regenerate at w_edit; the default (w_edit) makes the
  // source branch replay the inversion trajectory exactly.
  std::optional<double> compensation_guidance;
  bool keep_caches = false;
};

struct EditMetrics {
  double reconstruction_rel_err = 0.0;  // relative L-inf of the source branch vs x1
  double displacement = 0.0;            // ||edited - reconstruction|| per sample, mean
  // Two-factor metrics; NaN when no dataset is supplied.
  double preservation_error = std::numeric_limits<double>::quiet_NaN();
  double attainment = std::numeric_limits<double>::quiet_NaN();
};

struct EditResult {
  MatrixXd edited;
  MatrixXd reconstruction;
  EditMetrics metrics;
  DualBranchState state;
};

// Two-factor oracle: mean L2 error of the factor-A coordinates against the
// input, and the fraction of rows whose factor-B coordinates sit nearest to
// the target token's mean.
double factor_a_error(const MatrixXd& edited, const MatrixXd& x1);
double factor_b_attainment(const SyntheticDataset& data, const MatrixXd& edited, int target_token_b);

EditResult edit_pipeline(const MiniDiT& net, const MatrixXd& x1, const EditSpec& spec, const TimeGrid& grid,
                         const FixedPointConfig& fp_cfg, double w_inv, double w_edit, const EditOptions& options = {},
                         const SyntheticDataset* data = nullptr);

}  // namespace flowinv
