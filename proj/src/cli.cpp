#include "flowinv/cli.hpp"

#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

namespace flowinv {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> command_names() {
  return {"gen-data", "train", "invert", "reconstruct", "edit", "compare-ddim", "sweep-attn", "bench"};
}

json default_config() {
  return json::parse(R"({
    "seed": 1,
    "seeds": 64,
    "dataset": {"kind": "gaussian", "params": {}, "samples": 1000},
    "model": {"arch": "mlp"},
    "train": {
      "batch": 256, "steps": 5000, "lr": 0.001, "optimizer": "adam", "lr_final_fraction": 1.0,
      "cfg_dropout": 0.1, "fixed_batch": false, "loss_threshold": -1.0, "tail": 100,
      "eval_samples": 10000, "eval_steps": 100
    },
    "field": {"kind": "analytic", "mu": 2.0, "s": 0.5, "dim": 2, "checkpoint": ""},
    "inputs": {"source": "dataset", "path": "", "count": 16},
    "grid": {"steps": 30, "shift": 1.0},
    "inversion": {"iterations": 3, "aggregation": "average", "damping": 1.0, "sweep": [0, 1, 2, 3]},
    "guidance": {"prompt": [], "w_inv": 1.0, "w_edit": 2.0, "compensation": null},
    "edit": {
      "S_fraction": 0.6, "baseline_S_fraction": 0.0, "feature_point": "post_modulation", "map_blocks": [],
      "map_unconditional": true, "components": "V", "tau": 0.0, "taus": [0.0, 0.2, 0.5, 1.0],
      "inject_text_tokens": false, "dump_cache": false
    },
    "linear": {"dim": 3, "contraction": 0.5, "iterations": 20},
    "ddim": {
      "steps": 50,
      "mixture": {"weights": [0.5, 0.5], "means": [[-2.0, 0.0], [2.0, 0.0]], "variances": [[0.25, 0.25], [0.25, 0.25]]}
    },
    "assert": {"recon_rel_err": 1e-8, "identity_residual": 1e-10, "spearman": 0.9, "linear_oracle": 1e-7}
  })");
}

namespace {

// Objects whose keys are validated downstream rather than against defaults.
bool free_form(const std::string& path) { return path == "/dataset/params" || path == "/model"; }

std::string type_name(const json& j) {
  if (j.is_null()) return "null";
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  return "object";
}

void validate_against(const json& value, const json& defaults, const std::string& path) {
  if (free_form(path)) {
    if (!value.is_object()) throw ConfigError(path + " must be an object");
    return;
  }
  if (defaults.is_object()) {
    if (!value.is_object()) throw ConfigError(path + " must be an object");
    for (auto it = value.begin(); it != value.end(); ++it) {
      if (!defaults.contains(it.key())) throw ConfigError("unknown config key " + path + "/" + it.key());
      validate_against(it.value(), defaults.at(it.key()), path + "/" + it.key());
    }
    return;
  }
  if (defaults.is_null()) {
    if (!value.is_null() && !value.is_number()) throw ConfigError(path + " must be a number or null");
    return;
  }
  if (type_name(value) != type_name(defaults))
    throw ConfigError(path + " must be a " + type_name(defaults) + ", got " + type_name(value));
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  std::string pointer;
  std::size_t start = 0;
  while (start <= key.size()) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("empty path component in --set key '" + key + "'");
    pointer += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  config[json::json_pointer(pointer)] = value;
}

json resolve_config(const json& file_config, const std::vector<std::string>& overrides, std::optional<int> seeds) {
  const json defaults = default_config();
  json cfg = file_config.is_null() ? json::object() : file_config;
  if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& o : overrides) apply_override(cfg, o);
  if (seeds) cfg["seeds"] = *seeds;
  validate_against(cfg, defaults, "");
  json resolved = defaults;
  resolved.merge_patch(cfg);
  // merge_patch drops null members; the compensation guidance keeps its slot.
  if (!resolved["guidance"].contains("compensation")) resolved["guidance"]["compensation"] = nullptr;
  // Free-form objects are replaced, not merged, so stale default keys never
  // leak into them.
  if (cfg.contains("model")) resolved["model"] = cfg["model"];
  if (cfg.contains("dataset") && cfg["dataset"].contains("params"))
    resolved["dataset"]["params"] = cfg["dataset"]["params"];
  if (resolved["seeds"].get<int>() < 1) throw ConfigError("seeds must be positive");
  return resolved;
}

fs::path default_out_root() {
  if (const char* env = std::getenv("FLOWINV_OUT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

CommandOutcome run_command(const std::string& command, const json& file_config, const RunOptions& options) {
  static const std::map<std::string, std::function<void(cmd::RunContext&)>> table = {
      {"gen-data", cmd::gen_data},       {"train", cmd::train},
      {"invert", cmd::invert},           {"reconstruct", cmd::reconstruct},
      {"edit", cmd::edit},               {"compare-ddim", cmd::compare_ddim},
      {"sweep-attn", cmd::sweep_attn},   {"bench", cmd::bench}};
  CommandOutcome outcome;
  const auto entry = table.find(command);
  if (entry == table.end()) {
    outcome.exit_code = kExitUsage;
    outcome.message = "unknown command '" + command + "'";
    return outcome;
  }
  try {
    const json config = resolve_config(file_config, options.overrides, options.seeds);
    outcome.config_hash = json_hash(config);
    const fs::path root = options.out_root.empty() ? default_out_root() : options.out_root;
    outcome.run_dir = root / (command + "-" + outcome.config_hash);
    if (fs::exists(outcome.run_dir)) {
      if (!options.force) {
        outcome.exit_code = kExitUsage;
        outcome.message = "output directory " + outcome.run_dir.string() + " exists; pass --force to overwrite";
        return outcome;
      }
      if (!fs::exists(outcome.run_dir / "manifest.json") && !fs::is_empty(outcome.run_dir)) {
        outcome.exit_code = kExitUsage;
        outcome.message = "refusing to overwrite " + outcome.run_dir.string() + ": not a flowinv run directory";
        return outcome;
      }
      fs::remove_all(outcome.run_dir);
    }
    cmd::RunContext ctx(command, config, outcome.run_dir);
    entry->second(ctx);
    ctx.finish();
    outcome.assertions = ctx.assertions();
    for (const auto& a : outcome.assertions) {
      if (!a.passed) {
        outcome.exit_code = kExitAssertion;
        outcome.message += (outcome.message.empty() ? "" : "; ") + ("assertion failed: " + a.name + " (" + a.detail + ")");
      }
    }
  } catch (const MissingInput& e) {
    outcome.exit_code = kExitMissingInput;
    outcome.message = e.what();
  } catch (const NumericalFailure& e) {
    outcome.exit_code = kExitNumerical;
    outcome.message = std::string("numerical failure: ") + e.what();
  } catch (const json::exception& e) {
    outcome.exit_code = kExitUsage;
    outcome.message = std::string("config error: ") + e.what();
  } catch (const std::exception& e) {
    outcome.exit_code = kExitUsage;
    outcome.message = std::string("error: ") + e.what();
  }
  return outcome;
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"flowinv: rectified-flow inversion and editing experiments"};
  app.set_version_flag("--version", kCodeVersion);
  std::string command;
  std::string config_path;
  RunOptions options;
  int seeds = 0;
  std::string out_root;
  const auto names = command_names();
  app.add_option("command", command, "Command to run")->required()->check(CLI::IsMember(names));
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", options.overrides, "Override a config key: dotted.path=value")->take_all();
  app.add_option("--out", out_root, "Output root directory (default $FLOWINV_OUT or ./runs)");
  app.add_option("--seeds", seeds, "Number of seeds / samples for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("--force", options.force, "Overwrite an existing run directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seeds > 0) options.seeds = seeds;
  options.out_root = out_root;

  json file_config = json::object();
  if (!config_path.empty()) {
    if (!fs::exists(config_path)) {
      err << "missing input: " << config_path << "\n";
      return kExitMissingInput;
    }
    try {
      std::ifstream is(config_path);
      file_config = json::parse(is);
    } catch (const json::exception& e) {
      err << "config error: " << config_path << ": " << e.what() << "\n";
      return kExitUsage;
    }
  }
  const CommandOutcome outcome = run_command(command, file_config, options);
  if (!outcome.run_dir.empty() && outcome.exit_code != kExitUsage) out << outcome.run_dir.string() << "\n";
  for (const auto& a : outcome.assertions)
    out << (a.passed ? "ok    " : "FAIL  ") << a.name << ": " << a.detail << "\n";
  if (!outcome.message.empty()) err << outcome.message << "\n";
  return outcome.exit_code;
}

}  // namespace flowinv
