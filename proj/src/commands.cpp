#include "commands.hpp"

#include "flowinv/editing.hpp"
#include "flowinv/fields.hpp"
#include "flowinv/inversion.hpp"
#include "flowinv/numerics.hpp"
#include "flowinv/samplers.hpp"
#include "flowinv/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace flowinv::cmd {

namespace fs = std::filesystem;
using nlohmann::json;

RunContext::RunContext(std::string command, json config, fs::path dir)
    : command_(std::move(command)),
      config_(std::move(config)),
      hash_(json_hash(config_)),
      run_id_(command_ + "-" + hash_),
      dir_(std::move(dir)),
      metrics_({"run_id", "config_hash", "metric", "value", "units"}) {
  fs::create_directories(dir_);
}

void RunContext::metric(const std::string& name, double value, const std::string& units) {
  metrics_.add_row({run_id_, hash_, name, format_double(value), units});
}

void RunContext::check(const std::string& name, bool passed, const std::string& detail) {
  assertions_.push_back({name, passed, detail});
}

fs::path RunContext::artifact(const std::string& name) {
  artifacts_.push_back(name);
  return dir_ / name;
}

void RunContext::finish() const {
  metrics_.save(dir_ / "metrics.csv");
  json checks = json::array();
  for (const auto& a : assertions_) checks.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  const json manifest = {{"command", command_},     {"run_id", run_id_},   {"config_hash", hash_},
                         {"config", config_},       {"code_version", kCodeVersion},
                         {"seed", config_["seed"]}, {"artifacts", artifacts_}, {"assertions", checks}};
  write_text(dir_ / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

std::string fmt(double v) { return format_double(v); }

std::string describe(double value, const char* op, double bound) {
  std::ostringstream os;
  os << fmt(value) << ' ' << op << ' ' << fmt(bound);
  return os.str();
}

std::uint64_t seed_of(const json& cfg) { return cfg.at("seed").get<std::uint64_t>(); }

SyntheticDataset dataset_of(const json& cfg) {
  const json& d = cfg.at("dataset");
  return make_dataset(d.at("kind").get<std::string>(), d.at("params"), seed_of(cfg));
}

TimeGrid grid_of(const json& cfg) {
  const int steps = cfg.at("grid").at("steps").get<int>();
  if (steps < 1) throw ConfigError("grid.steps must be positive");
  const double shift = cfg.at("grid").at("shift").get<double>();
  return shift == 1.0 ? TimeGrid::uniform(static_cast<std::size_t>(steps))
                      : TimeGrid::shifted(static_cast<std::size_t>(steps), shift);
}

FixedPointConfig fixed_point_of(const json& cfg, int iterations) {
  const json& inv = cfg.at("inversion");
  FixedPointConfig fp;
  fp.iterations = iterations;
  const std::string agg = inv.at("aggregation").get<std::string>();
  if (agg == "average") fp.aggregation = Aggregation::average;
  else if (agg == "last") fp.aggregation = Aggregation::last;
  else throw ConfigError("inversion.aggregation must be 'average' or 'last'");
  fp.damping = inv.at("damping").get<double>();
  if (!(fp.damping > 0.0 && fp.damping <= 1.0)) throw ConfigError("inversion.damping must lie in (0, 1]");
  if (fp.iterations < 0) throw ConfigError("inversion.iterations must be non-negative");
  return fp;
}

FixedPointConfig fixed_point_of(const json& cfg) {
  return fixed_point_of(cfg, cfg.at("inversion").at("iterations").get<int>());
}

TrainConfig train_config_of(const json& cfg) {
  const json& t = cfg.at("train");
  TrainConfig c;
  c.batch = t.at("batch").get<int>();
  c.steps = t.at("steps").get<int>();
  c.lr = t.at("lr").get<double>();
  c.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
  c.lr_final_fraction = t.at("lr_final_fraction").get<double>();
  c.cfg_dropout = t.at("cfg_dropout").get<double>();
  c.fixed_batch = t.at("fixed_batch").get<bool>();
  c.loss_threshold = t.at("loss_threshold").get<double>();
  c.tail = t.at("tail").get<int>();
  c.seed = seed_of(cfg);
  c.dataset = cfg.at("dataset").at("kind").get<std::string>();
  c.validate();
  return c;
}

// The velocity field a command operates on.
struct LoadedField {
  std::unique_ptr<VelocityField<double>> analytic;
  std::unique_ptr<TrainableField> network;

  const VelocityField<double>& field() const {
    return network ? static_cast<const VelocityField<double>&>(*network) : *analytic;
  }
  Eigen::Index dim() const {
    return network ? network->data_dim() : static_cast<const AnalyticGaussianFlow<double>&>(*analytic).dim();
  }
};

LoadedField field_of(const json& cfg) {
  const json& f = cfg.at("field");
  const std::string kind = f.at("kind").get<std::string>();
  LoadedField out;
  if (kind == "analytic") {
    const int dim = f.at("dim").get<int>();
    if (dim < 1) throw ConfigError("field.dim must be positive");
    out.analytic = std::make_unique<AnalyticGaussianFlow<double>>(VectorXd::Constant(dim, f.at("mu").get<double>()),
                                                                  f.at("s").get<double>());
  } else if (kind == "checkpoint") {
    const fs::path path = f.at("checkpoint").get<std::string>();
    if (path.empty()) throw ConfigError("field.checkpoint must name a checkpoint file");
    if (!fs::exists(path)) throw MissingInput(path);
    out.network = load_checkpoint(path).network();
  } else {
    throw ConfigError("field.kind must be 'analytic' or 'checkpoint'");
  }
  return out;
}

TokenIds prompt_of(const json& cfg) { return cfg.at("guidance").at("prompt").get<TokenIds>(); }

MatrixXd read_inputs(const json& cfg, Eigen::Index dim, const TokenIds& prompt) {
  const json& in = cfg.at("inputs");
  const std::string source = in.at("source").get<std::string>();
  if (source == "file") {
    const fs::path path = in.at("path").get<std::string>();
    if (path.empty() || !fs::exists(path)) throw MissingInput(path);
    const MatrixXd x = read_matrix_csv(path, "x");
    if (x.cols() != dim)
      throw ConfigError("input file has " + std::to_string(x.cols()) + " x-columns, field expects " +
                        std::to_string(dim));
    return x;
  }
  if (source != "dataset") throw ConfigError("inputs.source must be 'dataset' or 'file'");
  const int count = in.at("count").get<int>();
  if (count < 1) throw ConfigError("inputs.count must be positive");
  const SyntheticDataset data = dataset_of(cfg);
  if (data.data_dim() != dim)
    throw ConfigError("dataset dimension " + std::to_string(data.data_dim()) + " does not match field (" +
                      std::to_string(dim) + ")");
  RngStream rng(seed_of(cfg));
  if (data.kind() == DatasetKind::two_factor && prompt.size() == 2)
    return data.sample_condition(rng, count, prompt[0], prompt[1]);
  return data.sample(rng, count).x;
}

CsvWriter states_csv(const std::vector<MatrixXd>& states, const TimeGrid& grid) {
  const Eigen::Index d = states.front().cols();
  std::vector<std::string> header{"node", "sigma", "sample"};
  for (Eigen::Index j = 0; j < d; ++j) header.push_back("x" + std::to_string(j));
  CsvWriter csv(header);
  for (std::size_t k = 0; k < states.size(); ++k)
    for (Eigen::Index i = 0; i < states[k].rows(); ++i) {
      std::vector<std::string> row{std::to_string(k), fmt(grid.sigma(k)), std::to_string(i)};
      for (Eigen::Index j = 0; j < d; ++j) row.push_back(fmt(states[k](i, j)));
      csv.add_row(std::move(row));
    }
  return csv;
}

CsvWriter diagnostics_csv(const std::vector<StepDiagnostics>& diags) {
  CsvWriter csv({"step", "iterate", "distance", "velocity_gap"});
  for (std::size_t t = 0; t < diags.size(); ++t) {
    if (diags[t].iterate_distances.empty()) csv.add_row({std::to_string(t), "0", "0", fmt(diags[t].velocity_gap)});
    for (std::size_t i = 0; i < diags[t].iterate_distances.size(); ++i)
      csv.add_row({std::to_string(t), std::to_string(i + 1), fmt(diags[t].iterate_distances[i]),
                   fmt(diags[t].velocity_gap)});
  }
  return csv;
}

}  // namespace

// ---------------------------------------------------------------------------

void gen_data(RunContext& ctx) {
  const json& cfg = ctx.config();
  SyntheticDataset data = dataset_of(cfg);
  const int n = cfg.at("dataset").at("samples").get<int>();
  if (n < 1) throw ConfigError("dataset.samples must be positive");
  const DataBatch batch = data.draw(n);
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < batch.x.cols(); ++j) header.push_back("x" + std::to_string(j));
  if (batch.tokens.cols() == 2) {
    header.push_back("token_a");
    header.push_back("token_b");
  }
  CsvWriter csv(header);
  for (Eigen::Index i = 0; i < batch.x.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index j = 0; j < batch.x.cols(); ++j) row.push_back(fmt(batch.x(i, j)));
    for (Eigen::Index k = 0; k < batch.tokens.cols(); ++k) row.push_back(std::to_string(batch.tokens(i, k)));
    csv.add_row(std::move(row));
  }
  csv.save(ctx.artifact("data.csv"));
  ctx.metric("samples", static_cast<double>(n), "count");
  const VectorXd m = batch.x.colwise().mean().transpose();
  for (Eigen::Index j = 0; j < m.size(); ++j) ctx.metric("sample_mean_x" + std::to_string(j), m(j), "data");
  ctx.check("finite_samples", batch.x.allFinite(), "all samples finite");
}

void train(RunContext& ctx) {
  const json& cfg = ctx.config();
  SyntheticDataset data = dataset_of(cfg);
  json arch = cfg.at("model");
  if (arch.value("arch", "") == "mlp" && !arch.contains("data_dim")) arch["data_dim"] = data.data_dim();
  const TrainConfig tc = train_config_of(cfg);
  const Checkpoint ck = train_field(arch, tc, data);
  save_checkpoint(ctx.artifact("checkpoint.bin"), ck);

  CsvWriter curve({"step", "loss"});
  for (std::size_t i = 0; i < ck.loss_curve.size(); ++i) curve.add_row({std::to_string(i), fmt(ck.loss_curve[i])});
  curve.save(ctx.artifact("loss_curve.csv"));

  const double final_loss = ck.metadata.at("final_loss").get<double>();
  ctx.metric("final_loss", final_loss, "squared_velocity");
  ctx.metric("loss_threshold", ck.metadata.at("loss_threshold").get<double>(), "squared_velocity");
  ctx.metric("loss_warning", ck.metadata.at("warning").get<bool>() ? 1.0 : 0.0, "flag");
  ctx.metric("parameters", static_cast<double>(ck.parameters.size()), "count");

  const auto net = ck.network();
  const int eval_n = cfg.at("train").at("eval_samples").get<int>();
  const int eval_steps = cfg.at("train").at("eval_steps").get<int>();
  if (eval_n < 2 || eval_steps < 1) throw ConfigError("train.eval_samples >= 2 and train.eval_steps >= 1 required");
  const TimeGrid grid = TimeGrid::uniform(static_cast<std::size_t>(eval_steps));
  RngStream eval_rng = RngStream(seed_of(cfg)).split().split();
  if (net->prompt_length() == 0) {
    const MatrixXd z = gaussian_sample(eval_rng, eval_n, net->data_dim());
    const MatrixXd generated = sample_ode<double>(*net, z, grid, Condition{}).states.back();
    const MatrixXd target = data.sample(eval_rng, eval_n).x;
    ctx.metric("energy_distance", energy_distance(generated, target), "distance");
  } else {
    if (data.kind() != DatasetKind::two_factor) throw ConfigError("conditional evaluation needs a two_factor dataset");
    const int per = std::max(2, eval_n / 4);
    double worst = 0.0;
    for (int a : {kTokenA1, kTokenA2})
      for (int b : {kTokenB1, kTokenB2}) {
        const MatrixXd z = gaussian_sample(eval_rng, per, net->data_dim());
        const MatrixXd generated = sample_ode<double>(*net, z, grid, Condition{{a, b}, 1.0}).states.back();
        const VectorXd err = generated.colwise().mean().transpose() - data.condition_mean(a, b);
        const double e = err.cwiseAbs().maxCoeff();
        worst = std::max(worst, e);
        ctx.metric("condition_mean_error_" + std::to_string(a) + "_" + std::to_string(b), e, "data");
      }
    ctx.metric("max_condition_mean_error", worst, "data");
  }
  ctx.check("finite_parameters", ck.parameters.allFinite(), "checkpoint parameters finite");
}

void invert(RunContext& ctx) {
  const json& cfg = ctx.config();
  const LoadedField lf = field_of(cfg);
  const TokenIds prompt = prompt_of(cfg);
  const MatrixXd x1 = read_inputs(cfg, lf.dim(), prompt);
  const TimeGrid grid = grid_of(cfg);
  const Condition cond{prompt, cfg.at("guidance").at("w_inv").get<double>()};
  const InversionResult<double> inv = flowinv::invert<double>(lf.field(), x1, grid, cond, fixed_point_of(cfg), true);

  states_csv(inv.trajectory.states, grid).save(ctx.artifact("trajectory.csv"));
  diagnostics_csv(inv.diagnostics).save(ctx.artifact("diagnostics.csv"));
  matrix_csv(inv.noise()).save(ctx.artifact("noise.csv"));

  double gap_sum = 0.0, gap_max = 0.0, last_dist = 0.0;
  for (const auto& d : inv.diagnostics) {
    gap_sum += d.velocity_gap;
    gap_max = std::max(gap_max, d.velocity_gap);
    if (!d.iterate_distances.empty()) last_dist = std::max(last_dist, d.iterate_distances.back());
  }
  ctx.metric("mean_velocity_gap", gap_sum / static_cast<double>(grid.steps()), "velocity");
  ctx.metric("max_velocity_gap", gap_max, "velocity");
  ctx.metric("max_final_iterate_distance", last_dist, "state");
  ctx.metric("noise_mean", inv.noise().mean(), "state");
  ctx.metric("noise_std",
             std::sqrt((inv.noise().array() - inv.noise().mean()).square().sum() /
                       static_cast<double>(inv.noise().size())),
             "state");
  ctx.check("finite_trajectory", inv.noise().allFinite(), "inverted noise finite");
}

void reconstruct(RunContext& ctx) {
  const json& cfg = ctx.config();
  const LoadedField lf = field_of(cfg);
  const TokenIds prompt = prompt_of(cfg);
  const MatrixXd x1 = read_inputs(cfg, lf.dim(), prompt);
  const TimeGrid grid = grid_of(cfg);
  const json& g = cfg.at("guidance");
  const Condition inv_cond{prompt, g.at("w_inv").get<double>()};
  const Condition regen_cond{prompt, g.at("compensation").is_null() ? inv_cond.guidance : g.at("compensation").get<double>()};

  InversionResult<double> inv = flowinv::invert<double>(lf.field(), x1, grid, inv_cond, fixed_point_of(cfg), true);
  inv = compute_compensations<double>(lf.field(), std::move(inv), regen_cond);
  const MatrixXd compensated = regenerate<double>(lf.field(), inv, regen_cond, true).states.back();
  const MatrixXd plain = regenerate<double>(lf.field(), inv, regen_cond, false).states.back();

  CsvWriter comp({"step", "sample", "norm"});
  double comp_max = 0.0;
  for (std::size_t t = 0; t < inv.compensations.size(); ++t)
    for (Eigen::Index i = 0; i < inv.compensations[t].rows(); ++i) {
      const double n = inv.compensations[t].row(i).norm();
      comp_max = std::max(comp_max, n);
      comp.add_row({std::to_string(t), std::to_string(i), fmt(n)});
    }
  comp.save(ctx.artifact("compensations.csv"));
  diagnostics_csv(inv.diagnostics).save(ctx.artifact("diagnostics.csv"));
  matrix_csv(compensated).save(ctx.artifact("reconstruction.csv"));

  const double rel = relative_linf<double>(compensated, x1);
  const double tol = cfg.at("assert").at("recon_rel_err").get<double>();
  ctx.metric("recon_rel_err", rel, "relative");
  ctx.metric("uncompensated_mse", (plain - x1).squaredNorm() / static_cast<double>(x1.size()), "squared_state");
  ctx.metric("max_compensation_norm", comp_max, "state");
  ctx.check("compensation_exactness", rel <= tol, describe(rel, "<=", tol));
}

namespace {

struct EditCase {
  int token_a;
  int source_b;
  int target_b;
  MatrixXd x1;
};

std::vector<EditCase> edit_cases(const SyntheticDataset& data, std::uint64_t seed, int n) {
  RngStream root(seed);
  std::vector<EditCase> cases;
  for (int k = 0; k < n; ++k) {
    RngStream r = root.split();
    EditCase c;
    c.token_a = kTokenA1 + static_cast<int>(r.below(2));
    c.source_b = kTokenB1 + static_cast<int>(r.below(2));
    c.target_b = c.source_b == kTokenB1 ? kTokenB2 : kTokenB1;
    c.x1 = data.sample_condition(r, 1, c.token_a, c.source_b);
    cases.push_back(std::move(c));
  }
  return cases;
}

EditSpec edit_spec_of(const json& cfg, const EditCase& c, double S, double tau, bool identical = false) {
  const json& e = cfg.at("edit");
  std::optional<AttentionInjection> inj;
  const QkvComponents comps = QkvComponents::parse(e.at("components").get<std::string>());
  if (tau > 0.0 && comps.any()) inj = AttentionInjection{comps, tau};
  EditSpec spec = EditSpec::make({c.token_a, c.source_b}, {c.token_a, identical ? c.source_b : c.target_b}, S, inj);
  const std::string point = e.at("feature_point").get<std::string>();
  if (point == "post_modulation") spec.feature_point = FeaturePoint::post_modulation;
  else if (point == "pre_modulation") spec.feature_point = FeaturePoint::pre_modulation;
  else throw ConfigError("edit.feature_point must be 'post_modulation' or 'pre_modulation'");
  spec.map_blocks = e.at("map_blocks").get<std::vector<int>>();
  spec.map_unconditional = e.at("map_unconditional").get<bool>();
  spec.inject_text_tokens = e.at("inject_text_tokens").get<bool>();
  spec.validate();
  return spec;
}

struct EditSetup {
  LoadedField lf;
  const MiniDiT* net = nullptr;
  SyntheticDataset data;
  TimeGrid grid;
  FixedPointConfig fp;
  double w_inv;
  double w_edit;
  EditOptions options;
};

EditSetup edit_setup(const json& cfg) {
  LoadedField lf = field_of(cfg);
  const auto* net = dynamic_cast<const MiniDiT*>(lf.network.get());
  if (net == nullptr) throw ConfigError("editing needs a mini-DiT checkpoint in field.checkpoint");
  SyntheticDataset data = dataset_of(cfg);
  if (data.kind() != DatasetKind::two_factor) throw ConfigError("editing needs dataset.kind = two_factor");
  EditSetup s{std::move(lf), net, std::move(data), grid_of(cfg), fixed_point_of(cfg),
              cfg.at("guidance").at("w_inv").get<double>(), cfg.at("guidance").at("w_edit").get<double>(), {}};
  const json& comp = cfg.at("guidance").at("compensation");
  if (!comp.is_null()) s.options.compensation_guidance = comp.get<double>();
  return s;
}

}  // namespace

void edit(RunContext& ctx) {
  const json& cfg = ctx.config();
  const EditSetup s = edit_setup(cfg);
  const int n = cfg.at("seeds").get<int>();
  const double S = cfg.at("edit").at("S_fraction").get<double>();
  const double S0 = cfg.at("edit").at("baseline_S_fraction").get<double>();
  const double tau = cfg.at("edit").at("tau").get<double>();
  const auto cases = edit_cases(s.data, seed_of(cfg), n);
  const std::size_t T = s.grid.steps();
  const bool exact_replay = !s.options.compensation_guidance || *s.options.compensation_guidance == s.w_edit;

  CsvWriter csv({"edit", "token_a", "source_b", "target_b", "preservation_map", "preservation_baseline",
                 "attained_map", "attained_baseline", "recon_rel_err", "map_steps"});
  std::vector<double> pres_map, pres_base, att_map, att_base;
  double worst_recon = 0.0;
  bool steps_ok = true;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const EditCase& c = cases[k];
    EditOptions opts = s.options;
    opts.keep_caches = k == 0 && cfg.at("edit").at("dump_cache").get<bool>();
    const EditResult with_map =
        edit_pipeline(*s.net, c.x1, edit_spec_of(cfg, c, S, tau), s.grid, s.fp, s.w_inv, s.w_edit, opts, &s.data);
    if (opts.keep_caches) save_cache_dump(ctx.artifact("cache_edit0.bin"), with_map.state);
    const EditResult base = edit_pipeline(*s.net, c.x1, edit_spec_of(cfg, c, S0, tau), s.grid, s.fp, s.w_inv,
                                          s.w_edit, s.options, &s.data);
    steps_ok = steps_ok && with_map.state.map_steps == active_steps(S, T);
    pres_map.push_back(with_map.metrics.preservation_error);
    pres_base.push_back(base.metrics.preservation_error);
    att_map.push_back(with_map.metrics.attainment);
    att_base.push_back(base.metrics.attainment);
    worst_recon = std::max(worst_recon, with_map.metrics.reconstruction_rel_err);
    csv.add_row({std::to_string(k), std::to_string(c.token_a), std::to_string(c.source_b), std::to_string(c.target_b),
                 fmt(pres_map.back()), fmt(pres_base.back()), fmt(att_map.back()), fmt(att_base.back()),
                 fmt(with_map.metrics.reconstruction_rel_err), std::to_string(with_map.state.map_steps)});
  }
  csv.save(ctx.artifact("edits.csv"));

  // Identical prompts must replay the reconstruction.
  const EditResult same = edit_pipeline(*s.net, cases.front().x1, edit_spec_of(cfg, cases.front(), S, tau, true),
                                        s.grid, s.fp, s.w_inv, s.w_edit, s.options, &s.data);
  const double noop = relative_linf<double>(same.edited, same.reconstruction);

  const double med_map = median(pres_map);
  const double med_base = median(pres_base);
  const double tol = cfg.at("assert").at("recon_rel_err").get<double>();
  ctx.metric("edits", static_cast<double>(n), "count");
  ctx.metric("attainment_rate", mean(att_map), "fraction");
  ctx.metric("attainment_rate_baseline", mean(att_base), "fraction");
  ctx.metric("median_preservation_error", med_map, "data");
  ctx.metric("median_preservation_error_baseline", med_base, "data");
  ctx.metric("preservation_ratio", med_base > 0.0 ? med_map / med_base : 0.0, "ratio");
  ctx.metric("max_recon_rel_err", worst_recon, "relative");
  ctx.metric("identical_prompt_rel_diff", noop, "relative");
  ctx.check("identical_prompt_noop", noop <= tol, describe(noop, "<=", tol));
  ctx.check("map_step_count", steps_ok, "map active for floor(S_fraction * T) steps in every edit");
  if (exact_replay) ctx.check("source_replay", worst_recon <= tol, describe(worst_recon, "<=", tol));
}

void sweep_attn(RunContext& ctx) {
  const json& cfg = ctx.config();
  const EditSetup s = edit_setup(cfg);
  const int n = cfg.at("seeds").get<int>();
  const double S = cfg.at("edit").at("S_fraction").get<double>();
  const auto taus = cfg.at("edit").at("taus").get<std::vector<double>>();
  if (taus.empty()) throw ConfigError("edit.taus must not be empty");
  const auto cases = edit_cases(s.data, seed_of(cfg), n);
  const std::size_t T = s.grid.steps();

  CsvWriter csv({"tau", "edit", "attained", "preservation", "injection_steps"});
  CsvWriter summary({"tau", "attainment_rate", "median_attainment", "median_preservation"});
  bool counts_ok = true;
  for (double tau : taus) {
    std::vector<double> att, pres;
    for (std::size_t k = 0; k < cases.size(); ++k) {
      const EditResult r = edit_pipeline(*s.net, cases[k].x1, edit_spec_of(cfg, cases[k], S, tau), s.grid, s.fp,
                                         s.w_inv, s.w_edit, s.options, &s.data);
      const bool any = QkvComponents::parse(cfg.at("edit").at("components").get<std::string>()).any();
      counts_ok = counts_ok && r.state.injection_steps == (any ? active_steps(tau, T) : 0);
      att.push_back(r.metrics.attainment);
      pres.push_back(r.metrics.preservation_error);
      csv.add_row({fmt(tau), std::to_string(k), fmt(att.back()), fmt(pres.back()),
                   std::to_string(r.state.injection_steps)});
    }
    summary.add_row({fmt(tau), fmt(mean(att)), fmt(median(att)), fmt(median(pres))});
    ctx.metric("attainment_rate_tau_" + fmt(tau), mean(att), "fraction");
    ctx.metric("median_attainment_tau_" + fmt(tau), median(att), "fraction");
    ctx.metric("median_preservation_tau_" + fmt(tau), median(pres), "data");
  }
  csv.save(ctx.artifact("sweep_edits.csv"));
  summary.save(ctx.artifact("sweep.csv"));
  ctx.check("injection_step_count", counts_ok, "injection active for floor(tau * T) steps in every edit");
}

void compare_ddim(RunContext& ctx) {
  const json& cfg = ctx.config();
  const LoadedField lf = field_of(cfg);
  if (lf.field().is_conditional()) throw ConfigError("compare-ddim needs an unconditional field");
  const int steps = cfg.at("ddim").at("steps").get<int>();
  if (steps < 2) throw ConfigError("ddim.steps must be at least 2");
  const std::size_t T = static_cast<std::size_t>(steps);
  const int n = cfg.at("seeds").get<int>();
  RngStream rng(seed_of(cfg));

  CsvWriter csv({"solver", "step", "time", "state_error", "identity_residual"});
  auto rms = [](const MatrixXd& a, const MatrixXd& b) {
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.rows()));
  };

  // Rectified flow, naive Euler inversion.
  const TimeGrid grid = TimeGrid::uniform(T);
  const MatrixXd z = gaussian_sample(rng, n, lf.dim());
  const Trajectory<double> fwd = sample_ode<double>(lf.field(), z, grid, Condition{});
  std::vector<double> rf_err, ddim_err, idx;
  double rf_identity = 0.0;
  {
    MatrixXd x = fwd.states.back();
    for (std::size_t s = 1; s <= T; ++s) {
      const std::size_t k = T - s;
      x = naive_invert_step<double>(lf.field(), x, k, grid, Condition{});
      const MatrixXd step = fwd.states[k] + grid.delta(k) * lf.field().velocity(fwd.states[k], grid.sigma(k), nullptr);
      const double identity = (fwd.states[k + 1] - step).cwiseAbs().maxCoeff();
      rf_identity = std::max(rf_identity, identity);
      rf_err.push_back(rms(x, fwd.states[k]));
      idx.push_back(static_cast<double>(s));
      csv.add_row({"rectified_flow_euler", std::to_string(s), fmt(grid.sigma(k)), fmt(rf_err.back()), fmt(identity)});
    }
  }

  // DDIM on a closed-form Gaussian-mixture score.
  const json& mix = cfg.at("ddim").at("mixture");
  const auto w = mix.at("weights").get<std::vector<double>>();
  const auto means = mix.at("means").get<std::vector<std::vector<double>>>();
  const auto vars = mix.at("variances").get<std::vector<std::vector<double>>>();
  if (means.empty() || means.size() != w.size() || vars.size() != w.size())
    throw ConfigError("ddim.mixture weights, means and variances must have the same count");
  const std::size_t d = means.front().size();
  MatrixXd m(static_cast<Eigen::Index>(w.size()), static_cast<Eigen::Index>(d));
  MatrixXd v(m.rows(), m.cols());
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (means[k].size() != d || vars[k].size() != d) throw ConfigError("ddim.mixture rows must share one dimension");
    for (std::size_t j = 0; j < d; ++j) {
      m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = means[k][j];
      v(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = vars[k][j];
    }
  }
  const DiffusionSchedule schedule = DiffusionSchedule::cosine(T);
  const GaussianMixtureScore<double> score(Eigen::Map<const VectorXd>(w.data(), static_cast<Eigen::Index>(w.size())),
                                           m, v, schedule.alphas_bar());
  const MatrixXd zd = gaussian_sample(rng, n, static_cast<Eigen::Index>(d));
  const std::vector<MatrixXd> dfwd = ddim_sample<double>(score, zd, schedule);
  double ddim_identity = 0.0;
  {
    MatrixXd x = dfwd.back();
    for (std::size_t s = 1; s <= T; ++s) {
      const std::size_t k = T - s;
      x = ddim_invert_step<double>(score, x, k, schedule);
      const double identity = rescaled_ddim_check<double>(score, dfwd[k], k, schedule);
      ddim_identity = std::max(ddim_identity, identity);
      ddim_err.push_back(rms(x, dfwd[k]));
      csv.add_row({"ddim", std::to_string(s), fmt(schedule.alpha_bar(k)), fmt(ddim_err.back()), fmt(identity)});
    }
  }
  csv.save(ctx.artifact("compare_ddim.csv"));

  const double rho_rf = spearman(idx, rf_err);
  const double rho_ddim = spearman(idx, ddim_err);
  const double rho_min = cfg.at("assert").at("spearman").get<double>();
  const double id_tol = cfg.at("assert").at("identity_residual").get<double>();
  ctx.metric("rf_final_state_error", rf_err.back(), "state");
  ctx.metric("ddim_final_state_error", ddim_err.back(), "state");
  ctx.metric("rf_spearman", rho_rf, "correlation");
  ctx.metric("ddim_spearman", rho_ddim, "correlation");
  ctx.metric("rf_max_identity_residual", rf_identity, "state");
  ctx.metric("ddim_max_identity_residual", ddim_identity, "scaled_state");
  const double rf_peak = *std::max_element(rf_err.begin(), rf_err.end());
  const double ddim_peak = *std::max_element(ddim_err.begin(), ddim_err.end());
  ctx.check("rf_curve_nonzero", rf_peak > 0.0, "max error " + fmt(rf_peak));
  ctx.check("ddim_curve_nonzero", ddim_peak > 0.0, "max error " + fmt(ddim_peak));
  ctx.check("rf_monotone_trend", rho_rf >= rho_min, describe(rho_rf, ">=", rho_min));
  ctx.check("ddim_monotone_trend", rho_ddim >= rho_min, describe(rho_ddim, ">=", rho_min));
  ctx.check("rescaled_ddim_identity", ddim_identity <= id_tol, describe(ddim_identity, "<=", id_tol));
}

void bench(RunContext& ctx) {
  const json& cfg = ctx.config();
  const LoadedField lf = field_of(cfg);
  if (lf.field().is_conditional()) throw ConfigError("bench needs an unconditional field");
  const TimeGrid grid = grid_of(cfg);
  const int n = cfg.at("seeds").get<int>();
  const auto sweep = cfg.at("inversion").at("sweep").get<std::vector<int>>();
  if (sweep.empty()) throw ConfigError("inversion.sweep must not be empty");
  std::vector<FixedPointConfig> configs;
  for (int it : sweep) configs.push_back(fixed_point_of(cfg, it));

  // Round trips, one seed per row.
  std::vector<std::vector<RoundTripRow>> per_seed;
  RngStream root(seed_of(cfg));
  for (int k = 0; k < n; ++k) {
    RngStream r = root.split();
    const MatrixXd z = gaussian_sample(r, 1, lf.dim());
    const MatrixXd x1 = sample_ode<double>(lf.field(), z, grid, Condition{}).states.back();
    per_seed.push_back(round_trip_report<double>(lf.field(), x1, grid, Condition{}, configs));
  }
  CsvWriter table({"iterations", "median_mse", "mean_mse", "ratio_to_first", "median_compensated_rel_err",
                   "median_velocity_gap", "median_compensation_norm"});
  std::vector<double> medians;
  double worst_comp = 0.0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    std::vector<double> mse, comp, gap, cnorm;
    for (const auto& rows : per_seed) {
      mse.push_back(rows[c].mse);
      comp.push_back(rows[c].compensated_rel_err);
      gap.push_back(rows[c].mean_velocity_gap);
      cnorm.push_back(rows[c].mean_compensation_norm);
    }
    medians.push_back(median(mse));
    worst_comp = std::max(worst_comp, *std::max_element(comp.begin(), comp.end()));
    const double ratio = medians.front() > 0.0 ? medians.back() / medians.front() : 0.0;
    table.add_row({std::to_string(sweep[c]), fmt(medians.back()), fmt(mean(mse)), fmt(ratio), fmt(median(comp)),
                   fmt(median(gap)), fmt(median(cnorm))});
    ctx.metric("median_mse_I" + std::to_string(sweep[c]), medians.back(), "squared_state");
  }
  table.save(ctx.artifact("bench.csv"));
  bool monotone = true;
  for (std::size_t c = 1; c < medians.size(); ++c) monotone = monotone && medians[c] <= medians[c - 1];
  const double ratio = medians.front() > 0.0 ? medians.back() / medians.front() : 0.0;
  ctx.metric("mse_ratio_last_to_first", ratio, "ratio");
  ctx.metric("max_compensated_rel_err", worst_comp, "relative");

  // Oracle equivalence on an affine field with a known contraction factor.
  const json& lin = cfg.at("linear");
  const int d = lin.at("dim").get<int>();
  const double q = lin.at("contraction").get<double>();
  if (d < 1 || !(q > 0.0 && q < 1.0))
    throw ConfigError("linear.dim >= 1 and linear.contraction in (0, 1) required");
  RngStream lr = root.split();
  // Symmetric PSD A: I + delta A is then non-expansive to invert, so the
  // chained inverse stays bounded and step errors do not amplify.
  const MatrixXd g = gaussian_sample(lr, d, d);
  const MatrixXd a_raw = g * g.transpose();
  double max_delta = 0.0;
  for (std::size_t t = 0; t < grid.steps(); ++t) max_delta = std::max(max_delta, std::abs(grid.delta(t)));
  const double spectral = Eigen::SelfAdjointEigenSolver<MatrixXd>(a_raw).eigenvalues().maxCoeff();
  const MatrixXd a = a_raw * (q / (max_delta * spectral));
  const VectorXd b = gaussian_vector(lr, d);
  const LinearField<double> field = LinearField<double>::constant(grid.sigmas(), a, b);
  const MatrixXd x1 = gaussian_sample(lr, n, d);
  FixedPointConfig oracle_cfg = fixed_point_of(cfg, lin.at("iterations").get<int>());
  oracle_cfg.aggregation = Aggregation::last;
  MatrixXd fp = x1, exact = x1;
  for (std::size_t k = grid.steps(); k-- > 0;) {
    fp = fixed_point_invert_step<double>(field, fp, k, grid, Condition{}, oracle_cfg).first;
    exact = exact_linear_invert_step<double>(field, exact, k, grid);
  }
  const double oracle = (fp - exact).cwiseAbs().maxCoeff();
  const double oracle_tol = cfg.at("assert").at("linear_oracle").get<double>();
  const double recon_tol = cfg.at("assert").at("recon_rel_err").get<double>();
  ctx.metric("linear_contraction", q, "ratio");
  ctx.metric("linear_oracle_linf", oracle, "state");

  ctx.check("fixed_point_monotone", monotone, "median MSE nonincreasing over the iteration sweep");
  ctx.check("compensation_exactness", worst_comp <= recon_tol, describe(worst_comp, "<=", recon_tol));
  ctx.check("linear_oracle", oracle <= oracle_tol, describe(oracle, "<=", oracle_tol));
}

}  // namespace flowinv::cmd
