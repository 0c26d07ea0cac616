#pragma once

#include "flowinv/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flowinv {

// A referenced file (checkpoint, input CSV) does not exist. Exit code 2.
class MissingInput : public Error {
 public:
  explicit MissingInput(const std::filesystem::path& path)
      : Error("missing input: " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitMissingInput = 2, kExitAssertion = 3, kExitNumerical = 4 };

inline constexpr const char* kCodeVersion = "0.1.0";
inline constexpr const char* kMetricsHeader = "run_id,config_hash,metric,value,units";
inline constexpr const char* kCompareDdimHeader = "solver,step,time,state_error,identity_residual";

std::vector<std::string> command_names();

// Every accepted key with its default value.
nlohmann::json default_config();

// Applies `key.path=value` (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& config, const std::string& assignment);

// defaults <- file <- overrides <- --seeds; validates keys and types.
nlohmann::json resolve_config(const nlohmann::json& file_config, const std::vector<std::string>& overrides = {},
                              std::optional<int> seeds = std::nullopt);

struct RunOptions {
  // Empty: $FLOWINV_OUT, else "runs".
  std::filesystem::path out_root;
  std::vector<std::string> overrides;
  std::optional<int> seeds;
  bool force = false;
};

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CommandOutcome {
  int exit_code = kExitOk;
  std::filesystem::path run_dir;
  std::string config_hash;
  std::string message;
  std::vector<Assertion> assertions;
};

std::filesystem::path default_out_root();

// Runs one command on a parsed config file; never throws for domain errors,
// which are mapped to exit codes.
CommandOutcome run_command(const std::string& command, const nlohmann::json& file_config, const RunOptions& options);

// Entry point for the flowinv binary.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace flowinv
