#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "localsa/io.hpp"

namespace localsa {

enum class Task { Quadratic, TD0, QLearning, LinearFile };

std::string to_string(Task task);
Task parse_task(const std::string& text);

struct ScheduleSpec {
  StepSchedule::Kind kind = StepSchedule::Kind::Constant;
  // Constant: alpha = "max" (admissible maximum times `scale`) or a number.
  bool alpha_auto = true;
  double alpha = 0.0;
  double scale = 1.0;
  // Harmonic: "theorem" = 2N/(H mu), "theorem_capped" = min(2N/(H mu), 1/L), or a number.
  std::string alpha0_mode = "theorem_capped";
  double alpha0 = 0.0;
};

/// Which rounds get an MSE record: every round, or a log grid with an
/// optional fully-recorded tail.
struct RecordSpec {
  bool all = false;
  std::size_t points = 200;
  double tail_fraction = 0.0;
};

struct ExperimentConfig {
  Task task = Task::Quadratic;
  json task_params = json::object();
  std::size_t N = 1;
  std::size_t H = 1;
  std::size_t d = 0;  // 0 means "derived from the task"
  std::size_t rounds = 1;
  bool rounds_auto = false;
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  ScheduleSpec schedule;
  SampleIndexing indexing = SampleIndexing::Fresh;
  std::string output;  // directory; empty disables file output
  bool record_locals = false;
  std::vector<std::string> checks;
  json theta0 = "zero";  // "zero", "theta_star" or an array
  InitialState initial_state = InitialState::Stationary;
  RecordSpec record;
  std::size_t bias_trials = 1000;
  bool compute_k_star = true;
};

ExperimentConfig parse_config(const json& j);
json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

inline const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names{"iterate_bounds", "consensus_drift", "bound_domination",
                                              "bias_mc"};
  return names;
}

/// Everything derived from a config before any trial runs.
struct Prepared {
  ExperimentConfig config;  // with rounds resolved
  Federation federation;
  std::optional<FeatureMap> features;
  json manifest = json::object();  // content hashes of generated inputs
  MixingTable mixing;
  TauFn tau_fn;
  double C = 0.0;
  StepSchedule schedule;
  double alpha_max = 0.0;  // constant schedules
  std::size_t tau = 0;
  std::optional<std::size_t> K_star;
  Vector theta0;
  std::vector<std::size_t> grid;  // recorded rounds
  BoundParams params;
};

Prepared prepare(const ExperimentConfig& config);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t k_min = 0;
  std::size_t k_max = 0;
  std::size_t points = 0;
};

/// OLS of log(mse) on log(k) over k in [k_min, k_max]; `mse[j]` belongs to `ks[j]`.
SlopeFit fit_loglog_slope(const std::vector<std::size_t>& ks, const std::vector<double>& mse,
                          std::size_t k_min, std::size_t k_max);
/// Dense form: mse[k] for k = 0, 1, ...
SlopeFit fit_loglog_slope(const std::vector<double>& mse, std::size_t k_min, std::size_t k_max);

struct RunOptions {
  std::size_t threads = 0;  // 0: LOCAL_SA_THREADS or machine parallelism
  bool write_files = true;
};

struct ExperimentResult {
  Prepared prepared;
  std::vector<std::vector<double>> trial_mse;  // [trial][grid index]
  std::vector<double> avg_mse;                 // per grid index
  std::vector<double> bound;                   // NaN where undefined
  std::optional<SlopeFit> slope;
  double plateau = 0.0;  // mean of avg_mse over the final 20% of recorded rounds
  std::vector<CheckReport> checks;
  std::vector<Trajectory> trajectories;  // when record_locals
  json summary;

  bool checks_passed() const;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Lemma monitors over stored trajectories, merged in trial order.
std::vector<CheckReport> trajectory_checks(const Prepared& prepared,
                                           const std::vector<Trajectory>& trajectories);

CheckReport merge_reports(const std::vector<CheckReport>& parts);

std::string trace_csv(const ExperimentResult& result);

/// Ergodicity, Lipschitz, monotonicity, growth and feature checks as one JSON
/// report with a top-level "pass".
json validate_assumptions(const ExperimentConfig& config);

std::size_t default_thread_count();

}  // namespace localsa
