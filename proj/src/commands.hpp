#pragma once

#include "flowinv/cli.hpp"
#include "flowinv/io.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace flowinv::cmd {

// Per-run state shared by the command implementations.
class RunContext {
 public:
  RunContext(std::string command, nlohmann::json config, std::filesystem::path dir);

  const std::string& command() const { return command_; }
  const nlohmann::json& config() const { return config_; }
  const std::string& hash() const { return hash_; }
  const std::string& run_id() const { return run_id_; }
  const std::filesystem::path& dir() const { return dir_; }

  void metric(const std::string& name, double value, const std::string& units);
  void check(const std::string& name, bool passed, const std::string& detail);
  // Path of an artifact inside the run directory, recorded in the manifest.
  std::filesystem::path artifact(const std::string& name);

  const std::vector<Assertion>& assertions() const { return assertions_; }
  void finish() const;  // writes metrics.csv and manifest.json

 private:
  std::string command_;
  nlohmann::json config_;
  std::string hash_;
  std::string run_id_;
  std::filesystem::path dir_;
  CsvWriter metrics_;
  std::vector<Assertion> assertions_;
  std::vector<std::string> artifacts_;
};

void gen_data(RunContext& ctx);
void train(RunContext& ctx);
void invert(RunContext& ctx);
void reconstruct(RunContext& ctx);
void edit(RunContext& ctx);
void compare_ddim(RunContext& ctx);
void sweep_attn(RunContext& ctx);
void bench(RunContext& ctx);

}  // namespace flowinv::cmd
