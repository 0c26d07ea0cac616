#include "flowinv/cli.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

using namespace flowinv;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string first_line(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  return line;
}

// FNV-1a, 64 bit.
std::string fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

RunOptions in(const fs::path& root, std::vector<std::string> overrides = {}) {
  RunOptions o;
  o.out_root = root;
  o.overrides = std::move(overrides);
  return o;
}

const json kGaussianData = json::parse(R"({"seed": 1, "dataset": {"kind": "gaussian", "params": {"dim": 2}, "samples": 200}})");

}  // namespace

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(resolve_config(json{{"grid", {{"stepz", 3}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"bogus", 1}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"grid", {{"steps", "thirty"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(json{{"grid", 3}}), ConfigError);
  EXPECT_THROW(resolve_config(json::array()), ConfigError);
  EXPECT_THROW(resolve_config(json::object(), {}, 0), ConfigError);
}

TEST(Config, DottedOverrides) {
  const json c = resolve_config(json::object(), {"grid.steps=12", "inversion.aggregation=last", "guidance.prompt=[0,3]"});
  EXPECT_EQ(c["grid"]["steps"], 12);
  EXPECT_EQ(c["inversion"]["aggregation"], "last");
  EXPECT_EQ(c["guidance"]["prompt"], json::parse("[0,3]"));
  EXPECT_EQ(c["grid"]["shift"], 1.0);
  EXPECT_THROW(resolve_config(json::object(), {"grid.steps"}), ConfigError);
  EXPECT_THROW(resolve_config(json::object(), {"grid..steps=3"}), ConfigError);
  EXPECT_EQ(resolve_config(json::object(), {}, 7)["seeds"], 7);
}

TEST(Config, HashIgnoresKeyOrder) {
  const json a = json::parse(R"({"grid": {"steps": 10, "shift": 2.0}, "seed": 3})");
  const json b = json::parse(R"({"seed": 3, "grid": {"shift": 2.0, "steps": 10}})");
  const auto root = test::scratch_dir("cli_hash");
  const CommandOutcome ra = run_command("bench", a, in(root / "a", {"seeds=2", "inversion.sweep=[0]"}));
  const CommandOutcome rb = run_command("bench", b, in(root / "b", {"seeds=2", "inversion.sweep=[0]"}));
  EXPECT_EQ(ra.config_hash, rb.config_hash);
  EXPECT_EQ(ra.run_dir.filename(), rb.run_dir.filename());
  EXPECT_NE(ra.config_hash, run_command("bench", a, in(root / "c", {"seeds=3", "inversion.sweep=[0]"})).config_hash);
}

TEST(Outputs, MetricsAndCompareHeaders) {
  const auto root = test::scratch_dir("cli_headers");
  const CommandOutcome r = run_command("compare-ddim", json{{"seeds", 8}}, in(root, {"ddim.steps=20"}));
  ASSERT_EQ(r.exit_code, kExitOk) << r.message;
  EXPECT_EQ(first_line(r.run_dir / "metrics.csv"), "run_id,config_hash,metric,value,units");
  EXPECT_EQ(first_line(r.run_dir / "compare_ddim.csv"), "solver,step,time,state_error,identity_residual");
  const json manifest = json::parse(slurp(r.run_dir / "manifest.json"));
  EXPECT_EQ(manifest["command"], "compare-ddim");
  EXPECT_EQ(manifest["config_hash"], r.config_hash);
  EXPECT_EQ(manifest["config"]["ddim"]["steps"], 20);
}

TEST(Outputs, GenDataPinnedBytes) {
  const auto root = test::scratch_dir("cli_gen");
  const CommandOutcome r = run_command("gen-data", kGaussianData, in(root));
  ASSERT_EQ(r.exit_code, kExitOk) << r.message;
  const std::string data = slurp(r.run_dir / "data.csv");
  EXPECT_EQ(first_line(r.run_dir / "data.csv"), "x0,x1");
  const json pinned = test::golden("gen_data_gaussian", json{{"fnv1a", fnv1a(data)}, {"bytes", data.size()}});
  EXPECT_EQ(pinned["fnv1a"], fnv1a(data));
  EXPECT_EQ(pinned["bytes"], data.size());
}

TEST(Outputs, RerunIsByteIdentical) {
  const auto root = test::scratch_dir("cli_rerun");
  const json cfg = json{{"seeds", 6}, {"inversion", {{"sweep", {0, 2}}}}};
  const CommandOutcome a = run_command("bench", cfg, in(root / "a"));
  const CommandOutcome b = run_command("bench", cfg, in(root / "b"));
  ASSERT_EQ(a.exit_code, kExitOk) << a.message;
  for (const char* f : {"metrics.csv", "bench.csv", "manifest.json"})
    EXPECT_EQ(slurp(a.run_dir / f), slurp(b.run_dir / f)) << f;
}

TEST(ExitCodes, ExistingDirectoryNeedsForce) {
  const auto root = test::scratch_dir("cli_force");
  ASSERT_EQ(run_command("gen-data", kGaussianData, in(root)).exit_code, kExitOk);
  const CommandOutcome again = run_command("gen-data", kGaussianData, in(root));
  EXPECT_EQ(again.exit_code, kExitUsage);
  EXPECT_NE(again.message.find("--force"), std::string::npos);
  RunOptions forced = in(root);
  forced.force = true;
  EXPECT_EQ(run_command("gen-data", kGaussianData, forced).exit_code, kExitOk);
}

TEST(ExitCodes, UsageErrors) {
  const auto root = test::scratch_dir("cli_usage");
  EXPECT_EQ(run_command("gen-data", json{{"dataset", {{"kind", "spiral"}}}}, in(root)).exit_code, kExitUsage);
  EXPECT_EQ(run_command("nonsense", json::object(), in(root)).exit_code, kExitUsage);
  EXPECT_EQ(run_command("bench", json{{"inversion", {{"aggregation", "median"}}}}, in(root)).exit_code, kExitUsage);
}

TEST(ExitCodes, MissingInputs) {
  const auto root = test::scratch_dir("cli_missing");
  const json ck = json{{"field", {{"kind", "checkpoint"}, {"checkpoint", (root / "nope.bin").string()}}}};
  const CommandOutcome r = run_command("invert", ck, in(root));
  EXPECT_EQ(r.exit_code, kExitMissingInput);
  EXPECT_NE(r.message.find("nope.bin"), std::string::npos);
  const json file = json{{"inputs", {{"source", "file"}, {"path", (root / "x.csv").string()}}}};
  EXPECT_EQ(run_command("invert", file, in(root)).exit_code, kExitMissingInput);

  const std::string cfg_path = (root / "absent.json").string();
  std::vector<std::string> args{"flowinv", "bench", "--config", cfg_path};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  EXPECT_EQ(run_cli(static_cast<int>(argv.size()), argv.data(), out, err), kExitMissingInput);
}

TEST(ExitCodes, FailedAssertion) {
  const auto root = test::scratch_dir("cli_assert");
  const CommandOutcome r = run_command("reconstruct", json::object(), in(root, {"assert.recon_rel_err=-1"}));
  EXPECT_EQ(r.exit_code, kExitAssertion);
  EXPECT_NE(r.message.find("compensation_exactness"), std::string::npos);
  EXPECT_TRUE(fs::exists(r.run_dir / "metrics.csv"));
}

TEST(Cli, ReadsCsvInputs) {
  const auto root = test::scratch_dir("cli_csv");
  std::ofstream(root / "x.csv") << "x0,x1,label\n0.5,1.5,a\n2.0,-1.0,b\n";
  const json cfg = json{{"inputs", {{"source", "file"}, {"path", (root / "x.csv").string()}}}};
  const CommandOutcome r = run_command("reconstruct", cfg, in(root / "runs"));
  ASSERT_EQ(r.exit_code, kExitOk) << r.message;
  std::ofstream(root / "bad.csv") << "x0,x1\n0.5,oops\n";
  const json bad = json{{"inputs", {{"source", "file"}, {"path", (root / "bad.csv").string()}}}};
  const CommandOutcome rb = run_command("reconstruct", bad, in(root / "runs"));
  EXPECT_EQ(rb.exit_code, kExitUsage);
  EXPECT_NE(rb.message.find("bad.csv:2"), std::string::npos) << rb.message;
}
