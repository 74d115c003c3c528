#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "localsa/cli.hpp"
#include "localsa/io.hpp"

using namespace localsa;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "localsa");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("localsa_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small quadratic run with every trajectory monitor.
json monitored_run(const fs::path& out) {
  return {{"task", "quadratic"},
          {"task_params", {{"n_states", 3}}},
          {"N", 3},
          {"H", 3},
          {"d", 3},
          {"rounds", 400},
          {"trials", 3},
          {"seed", 5},
          {"schedule", {{"type", "constant"}, {"alpha", "max"}}},
          {"record_locals", true},
          {"checks", {"iterate_bounds", "consensus_drift", "bound_domination"}},
          {"output", out.string()}};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("validate on the shipped config succeeds") {
  const auto r = cli({"validate", std::string(LOCALSA_SOURCE_DIR) + "/configs/quadratic_constant.json"});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"pass\": true") != std::string::npos);
}

TEST_CASE("missing config exits with 2 and names the stage") {
  const auto r = cli({"run", "/nonexistent/config.json"});
  CHECK(r.code == 2);
  CHECK(r.err.find("load config") != std::string::npos);
  CHECK(cli({"bogus"}).code == 2);
}

TEST_CASE("run then check replays exactly") {
  const auto dir = scratch_dir("clean");
  const auto config = dir / "config.json";
  write_text_file(config.string(), monitored_run(dir / "out").dump(2));
  CHECK(cli({"run", config.string(), "--threads", "2"}).code == 0);
  const auto r = cli({"check", (dir / "out").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("mismatch") == std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("check on an inadmissible run exits with 1") {
  const auto dir = scratch_dir("inadmissible");
  const auto config = dir / "config.json";
  // Far above the admissible step: local iterates overshoot within a round.
  auto j = monitored_run(dir / "out");
  j["schedule"] = {{"type", "constant"}, {"alpha", 1.5}};
  j["H"] = 4;
  j["rounds"] = 3;
  j["theta0"] = {5.0, 5.0, 5.0};
  write_text_file(config.string(), j.dump(2));
  CHECK(cli({"run", config.string()}).code == 1);
  CHECK(cli({"check", (dir / "out").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("mixing and bounds subcommands") {
  const auto dir = scratch_dir("mixing");
  write_text_file((dir / "chain.txt").string(), "2\n0.9 0.1\n0.2 0.8\n");
  const auto m = cli({"mixing", (dir / "chain.txt").string(), "--alpha", "0.01"});
  CHECK(m.code == 0);
  CHECK(m.out.find("12") != std::string::npos);
  const auto b = cli({"bounds", std::string(LOCALSA_SOURCE_DIR) + "/configs/quadratic_constant.json", "--k", "500"});
  CHECK(b.code == 0);
  CHECK(cli({"mixing", (dir / "missing.txt").string()}).code == 2);
  fs::remove_all(dir);
}

}  // TEST_SUITE
