#include "localsa/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "localsa/error.hpp"
#include "localsa/harness.hpp"

namespace localsa {

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kError = 2;

void print_reports(std::ostream& out, const std::vector<CheckReport>& reports) {
  for (const auto& r : reports) {
    out << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(32) << r.name << std::right
        << " checks=" << r.total_checks << " violations=" << r.violations;
    if (r.total_checks > 0) out << " worst_margin=" << r.worst_margin;
    if (r.statistical) out << " (statistical)";
    out << '\n';
  }
}

// Each stage rethrows with its name so diagnostics say where things broke.
template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  }
}

int cmd_run(const std::string& path, std::size_t threads, std::ostream& out) {
  const auto config = stage("load config", [&] { return load_config(path); });
  RunOptions options;
  options.threads = threads;
  const auto result = stage("run", [&] { return run_experiment(config, options); });
  const auto& p = result.prepared;
  const auto& c = p.federation.constants;
  out << "task " << to_string(p.config.task) << "  N=" << p.federation.N() << " H=" << p.config.H
      << " d=" << p.federation.dim() << " rounds=" << p.config.rounds << " trials=" << p.config.trials << '\n';
  out << "B=" << c.B << " L=" << c.L << " mu=" << c.mu << " C=" << p.C << " tau=" << p.tau;
  if (p.K_star) out << " K*=" << *p.K_star;
  out << " alpha=" << p.schedule.alpha << '\n';
  if (result.slope) out << "slope=" << result.slope->slope << " r2=" << result.slope->r_squared << '\n';
  out << "plateau=" << result.plateau << '\n';
  print_reports(out, result.checks);
  if (!p.config.output.empty()) out << "wrote " << p.config.output << '\n';
  return result.checks_passed() ? kOk : kCheckFailed;
}

int cmd_validate(const std::string& path, std::ostream& out) {
  const auto config = stage("load config", [&] { return load_config(path); });
  const json report = validate_assumptions(config);
  out << report.dump(2) << '\n';
  return report.at("pass").get<bool>() ? kOk : kCheckFailed;
}

int cmd_mixing(const std::string& path, double alpha, std::ostream& out) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::Config, "--alpha must lie in (0,1)");
  const auto chain = stage("read chain", [&] { return read_chain_file(path); });
  const auto profile = mixing_time(chain, alpha);
  std::vector<double> grid{alpha};
  for (int j = 0; j < 10; ++j) grid.push_back(std::pow(10.0, -4.0 + 3.0 * j / 9.0));
  const double C = estimate_geometric_constant(chain, grid);
  out << "states=" << chain.num_states() << " alpha=" << alpha << " tau=" << profile.tau << " C=" << C << '\n';
  out << "d(k):";
  for (double d : profile.d_curve) out << ' ' << d;
  out << '\n';
  return kOk;
}

int cmd_bounds(const std::string& path, std::size_t k, std::optional<double> e_start, std::ostream& out) {
  const auto config = stage("load config", [&] { return load_config(path); });
  const auto p = stage("prepare", [&] { return prepare(config); });
  const double e = e_start.value_or((p.theta0 - p.federation.theta_star).squaredNorm());
  const auto& c = p.federation.constants;
  out << "B=" << c.B << " L=" << c.L << " mu=" << c.mu << " C=" << p.C << " |theta*|=" << c.theta_star_norm
      << " factor=" << theorem_factor(p.params) << '\n';
  if (p.schedule.kind == StepSchedule::Kind::Constant) {
    out << "alpha=" << p.schedule.alpha << " alpha_max=" << p.alpha_max << " tau=" << p.tau << '\n';
    const double b = stage("bound", [&] { return bound_constant_step(k, p.schedule.alpha, p.params, e); });
    out << "bound_constant_step(k=" << k << ", E_tau=" << e << ") = " << b << '\n';
  } else {
    if (!p.K_star) throw Error(ErrorKind::NotFoundWithinCap, "K* was not found; no time-varying bound");
    out << "alpha0=" << p.schedule.alpha << " K*=" << *p.K_star << '\n';
    const double b = stage("bound", [&] { return bound_timevarying(k, p.schedule.alpha, *p.K_star, p.params, e); });
    out << "bound_timevarying(k=" << k << ", E_K*=" << e << ") = " << b << '\n';
  }
  return kOk;
}

int cmd_check(const std::string& dir, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  const json summary = stage("read summary", [&] { return read_json_file((fs::path(dir) / "summary.json").string()); });
  const auto config = stage("config", [&] { return parse_config(summary.at("config")); });
  const auto p = stage("prepare", [&] { return prepare(config); });

  std::vector<Trajectory> trajectories;
  for (std::size_t trial = 0;; ++trial) {
    const fs::path file = fs::path(dir) / ("trajectory_" + std::to_string(trial) + ".bin");
    if (!fs::exists(file)) break;
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + file.string());
    trajectories.push_back(stage("read trajectory", [&] { return read_trajectory(in); }));
  }
  if (trajectories.empty() && p.config.record_locals) {
    throw Error(ErrorKind::Io, "no trajectory logs in '" + dir + "'");
  }
  if (p.config.record_locals && trajectories.size() != p.config.trials) {
    throw Error(ErrorKind::Io, "expected " + std::to_string(p.config.trials) + " trajectory logs, found " +
                                   std::to_string(trajectories.size()));
  }

  auto replayed = stage("replay", [&] { return trajectory_checks(p, trajectories); });
  // Bound domination depends only on the stored curves.
  const auto& stored = summary.at("checks");
  for (const auto& entry : stored) {
    const auto name = entry.at("name").get<std::string>();
    if (name.rfind("bound_domination", 0) != 0) continue;
    CheckReport r;
    r.name = name;
    const auto& ks = summary.at("k");
    const auto& avg = summary.at("avg_mse");
    const auto& bound = summary.at("bound");
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (bound[j].is_null()) continue;
      r.record(avg[j].get<double>(), bound[j].get<double>(), ks[j].get<std::size_t>(), 0, 0, "mse");
    }
    replayed.push_back(std::move(r));
  }

  bool ok = true;
  for (const auto& r : replayed) {
    const json fresh = json::parse(to_json(r).dump());
    const json* match = nullptr;
    for (const auto& entry : stored) {
      if (entry.at("name") == r.name) match = &entry;
    }
    if (!match) {
      err << "replay: report '" << r.name << "' missing from summary\n";
      ok = false;
    } else if (*match != fresh) {
      err << "replay: report '" << r.name << "' differs from the stored one\n";
      ok = false;
    } else {
      out << "replayed " << r.name << " exactly\n";
    }
  }
  for (const auto& entry : stored) {
    const auto name = entry.at("name").get<std::string>();
    bool replayable = false;
    for (const auto& r : replayed) replayable = replayable || r.name == name;
    if (!replayable) out << "not replayed (statistical, rerun with `run`): " << name << '\n';
  }
  print_reports(out, replayed);
  for (const auto& entry : stored) ok = ok && entry.at("passed").get<bool>();
  return ok ? kOk : kCheckFailed;
}

}  // namespace

int cli_main(int argc, char** argv) { return cli_main(argc, argv, std::cout, std::cerr); }

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local stochastic approximation simulator", "localsa"};
  app.require_subcommand(1);

  std::string path;
  std::size_t threads = 0;
  double alpha = 0.01;
  std::size_t k = 0;
  std::optional<double> e_start;

  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", path, "Experiment config (JSON)")->required();
  run->add_option("--threads", threads, "Worker threads (0: LOCAL_SA_THREADS or machine parallelism)");

  auto* validate = app.add_subcommand("validate", "Check the assumptions of a config's federation");
  validate->add_option("config", path, "Experiment config (JSON)")->required();

  auto* mixing = app.add_subcommand("mixing", "Mixing time and geometric constant of a chain file");
  mixing->add_option("chain", path, "Chain file: n, then n rows")->required();
  mixing->add_option("--alpha", alpha, "TV threshold");

  auto* bounds = app.add_subcommand("bounds", "Evaluate the convergence bound at round k");
  bounds->add_option("config", path, "Experiment config (JSON)")->required();
  bounds->add_option("--k", k, "Round")->required();
  bounds->add_option("--e", e_start, "E at tau (constant) or K* (harmonic); default |theta0 - theta*|^2");

  auto* check = app.add_subcommand("check", "Replay lemma monitors on a stored run");
  check->add_option("dir", path, "Output directory of a run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kError;
  }

  try {
    if (*run) return cmd_run(path, threads, out);
    if (*validate) return cmd_validate(path, out);
    if (*mixing) return cmd_mixing(path, alpha, out);
    if (*bounds) return cmd_bounds(path, k, e_start, out);
    if (*check) return cmd_check(path, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kError;
  }
  return kError;
}

}  // namespace localsa
