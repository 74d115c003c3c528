#include "localsa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "localsa/error.hpp"
#include "localsa/text.hpp"

namespace localsa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::string to_string(Task task) {
  switch (task) {
    case Task::Quadratic: return "quadratic";
    case Task::TD0: return "td0";
    case Task::QLearning: return "qlearning";
    case Task::LinearFile: return "linear_file";
  }
  return "unknown";
}

Task parse_task(const std::string& text) {
  if (text == "quadratic") return Task::Quadratic;
  if (text == "td0") return Task::TD0;
  if (text == "qlearning") return Task::QLearning;
  if (text == "linear_file") return Task::LinearFile;
  throw Error(ErrorKind::Config, "unknown task '" + text + "'");
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("LOCAL_SA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Config -----------------------------------------------------------------

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("key '") + key + "': " + e.what());
  }
}

std::size_t positive(const json& j, const char* key, std::size_t fallback) {
  if (j.contains(key) && j.at(key).is_number_integer() && j.at(key).get<long long>() < 1) {
    throw Error(ErrorKind::Config, std::string("'") + key + "' must be >= 1");
  }
  const auto v = get_or<std::size_t>(j, key, fallback);
  if (v < 1) throw Error(ErrorKind::Config, std::string("'") + key + "' must be >= 1");
  return v;
}

}  // namespace

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  static const std::set<std::string> allowed{
      "task", "task_params", "N", "H", "d", "rounds", "trials", "seed", "schedule", "sample_indexing",
      "output", "record_locals", "checks", "theta0", "initial_state", "record", "bias_trials",
      "compute_k_star"};
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw Error(ErrorKind::Config, "unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  if (!j.contains("task")) throw Error(ErrorKind::Config, "missing 'task'");
  c.task = parse_task(j.at("task").get<std::string>());
  c.task_params = j.value("task_params", json::object());
  if (!c.task_params.is_object()) throw Error(ErrorKind::Config, "'task_params' must be an object");
  c.N = positive(j, "N", 1);
  c.H = positive(j, "H", 1);
  c.d = get_or<std::size_t>(j, "d", 0);
  if (j.contains("rounds") && j.at("rounds").is_string()) {
    if (j.at("rounds").get<std::string>() != "auto") throw Error(ErrorKind::Config, "'rounds' must be a number or \"auto\"");
    c.rounds_auto = true;
  } else {
    c.rounds = positive(j, "rounds", 1);
  }
  c.trials = positive(j, "trials", 1);
  c.seed = get_or<std::uint64_t>(j, "seed", 0);

  const json sched = j.value("schedule", json{{"type", "constant"}});
  const auto type = get_or<std::string>(sched, "type", "constant");
  if (type == "constant") {
    c.schedule.kind = StepSchedule::Kind::Constant;
    const json alpha = sched.value("alpha", json("max"));
    if (alpha.is_string()) {
      if (alpha.get<std::string>() != "max") throw Error(ErrorKind::Config, "constant alpha must be a number or \"max\"");
      c.schedule.alpha_auto = true;
    } else {
      c.schedule.alpha_auto = false;
      c.schedule.alpha = alpha.get<double>();
      if (!(c.schedule.alpha > 0.0)) throw Error(ErrorKind::Config, "constant alpha must be positive");
    }
    c.schedule.scale = get_or<double>(sched, "scale", 1.0);
    if (!(c.schedule.scale > 0.0)) throw Error(ErrorKind::Config, "schedule scale must be positive");
  } else if (type == "harmonic") {
    c.schedule.kind = StepSchedule::Kind::Harmonic;
    const json alpha0 = sched.value("alpha0", json("theorem_capped"));
    if (alpha0.is_string()) {
      c.schedule.alpha0_mode = alpha0.get<std::string>();
      if (c.schedule.alpha0_mode != "theorem" && c.schedule.alpha0_mode != "theorem_capped") {
        throw Error(ErrorKind::Config, "alpha0 must be a number, \"theorem\" or \"theorem_capped\"");
      }
    } else {
      c.schedule.alpha0_mode = "value";
      c.schedule.alpha0 = alpha0.get<double>();
      if (!(c.schedule.alpha0 > 0.0)) throw Error(ErrorKind::Config, "alpha0 must be positive");
    }
  } else {
    throw Error(ErrorKind::Config, "schedule type must be 'constant' or 'harmonic'");
  }

  c.indexing = parse_sample_indexing(get_or<std::string>(j, "sample_indexing", "fresh"));
  c.output = get_or<std::string>(j, "output", "");
  c.record_locals = get_or<bool>(j, "record_locals", false);
  c.checks = get_or<std::vector<std::string>>(j, "checks", {});
  for (const auto& name : c.checks) {
    if (std::find(known_checks().begin(), known_checks().end(), name) == known_checks().end()) {
      throw Error(ErrorKind::Config, "unknown check '" + name + "'");
    }
    if ((name == "iterate_bounds" || name == "consensus_drift") && !c.record_locals) {
      throw Error(ErrorKind::Config, "check '" + name + "' needs record_locals = true");
    }
  }
  c.theta0 = j.value("theta0", json("zero"));
  if (c.theta0.is_string() && c.theta0 != "zero" && c.theta0 != "theta_star") {
    throw Error(ErrorKind::Config, "theta0 must be \"zero\", \"theta_star\" or an array");
  }
  const auto init = get_or<std::string>(j, "initial_state", "stationary");
  if (init == "stationary") {
    c.initial_state = InitialState::Stationary;
  } else if (init == "fixed") {
    c.initial_state = InitialState::Fixed;
  } else {
    throw Error(ErrorKind::Config, "initial_state must be 'stationary' or 'fixed'");
  }
  const json rec = j.value("record", json::object());
  c.record.all = get_or<std::string>(rec, "mode", "log") == "all";
  c.record.points = get_or<std::size_t>(rec, "points", 200);
  c.record.tail_fraction = get_or<double>(rec, "tail_fraction", 0.0);
  if (!(c.record.tail_fraction >= 0.0 && c.record.tail_fraction <= 1.0)) {
    throw Error(ErrorKind::Config, "record.tail_fraction must lie in [0,1]");
  }
  c.bias_trials = get_or<std::size_t>(j, "bias_trials", 1000);
  c.compute_k_star = get_or<bool>(j, "compute_k_star", true);
  return c;
}

json to_json(const ExperimentConfig& c) {
  json sched;
  if (c.schedule.kind == StepSchedule::Kind::Constant) {
    sched = {{"type", "constant"}, {"scale", c.schedule.scale}};
    sched["alpha"] = c.schedule.alpha_auto ? json("max") : json(c.schedule.alpha);
  } else {
    sched = {{"type", "harmonic"}};
    sched["alpha0"] = c.schedule.alpha0_mode == "value" ? json(c.schedule.alpha0) : json(c.schedule.alpha0_mode);
  }
  return {{"task", to_string(c.task)},
          {"task_params", c.task_params},
          {"N", c.N},
          {"H", c.H},
          {"d", c.d},
          {"rounds", c.rounds},
          {"trials", c.trials},
          {"seed", c.seed},
          {"schedule", sched},
          {"sample_indexing", to_string(c.indexing)},
          {"output", c.output},
          {"record_locals", c.record_locals},
          {"checks", c.checks},
          {"theta0", c.theta0},
          {"initial_state", c.initial_state == InitialState::Stationary ? "stationary" : "fixed"},
          {"record", {{"mode", c.record.all ? "all" : "log"}, {"points", c.record.points},
                      {"tail_fraction", c.record.tail_fraction}}},
          {"bias_trials", c.bias_trials},
          {"compute_k_star", c.compute_k_star}};
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

// Federation assembly ---------------------------------------------------

namespace {

struct Components {
  std::vector<OperatorSpec> ops;
  std::vector<MarkovChain> chains;
  std::optional<FeatureMap> features;
  json manifest = json::object();
};

MDP single_state_mdp(const json& tp) {
  MDP mdp;
  mdp.S = 1;
  mdp.A = 2;
  mdp.P = {1.0, 1.0};
  mdp.R = Matrix(1, 2);
  const auto rewards = get_or<std::vector<double>>(tp, "rewards", {1.0, 0.0});
  if (rewards.size() != 2) throw Error(ErrorKind::Config, "single_state rewards need two entries");
  mdp.R << rewards[0], rewards[1];
  mdp.gamma = get_or<double>(tp, "gamma", 0.5);
  mdp.R_max = std::max(std::abs(rewards[0]), std::abs(rewards[1]));
  mdp.validate();
  return mdp;
}

Components build_components(const ExperimentConfig& c) {
  Components out;
  const json& tp = c.task_params;
  switch (c.task) {
    case Task::Quadratic: {
      QuadraticOptions o;
      o.N = c.N;
      o.d = c.d == 0 ? 4 : c.d;
      o.n_states = get_or<std::size_t>(tp, "n_states", 4);
      o.mu_target = get_or<double>(tp, "mu_target", 1.0);
      o.L_target = get_or<double>(tp, "L_target", 2.0);
      o.heterogeneity = get_or<double>(tp, "heterogeneity", 0.5);
      o.seed = get_or<std::uint64_t>(tp, "generator_seed", c.seed);
      o.chain_family = parse_chain_family(get_or<std::string>(tp, "chain_family", "random"));
      o.smoothing = get_or<double>(tp, "smoothing", 0.01);
      o.q_perturbation = get_or<double>(tp, "q_perturbation", 0.5);
      o.c_scale = get_or<double>(tp, "c_scale", 1.0);
      o.c_noise = get_or<double>(tp, "c_noise", 0.1);
      auto fed = make_quadratic_federation(o);
      out.ops = std::move(fed.ops);
      out.chains = std::move(fed.chains);
      break;
    }
    case Task::TD0: {
      const auto S = get_or<std::size_t>(tp, "S", 5);
      const auto A = get_or<std::size_t>(tp, "A", 2);
      const auto gamma = get_or<double>(tp, "gamma", 0.9);
      const auto r_max = get_or<double>(tp, "R_max", 1.0);
      const auto smoothing = get_or<double>(tp, "smoothing", 0.05);
      const auto L = get_or<std::size_t>(tp, "L", c.d == 0 ? 3 : c.d);
      const auto gen_seed = get_or<std::uint64_t>(tp, "generator_seed", c.seed);
      RandomStream feature_rng(derive_seed(gen_seed, 0xfea7));
      FeatureMap features = tp.contains("features") ? features_from_json(tp.at("features"))
                                                    : make_features(S, L, feature_rng);
      out.manifest["features"] = content_hash(features_to_json(features));
      out.manifest["mdps"] = json::array();
      for (std::size_t i = 0; i < c.N; ++i) {
        const MDP mdp = make_random_mdp(S, A, gamma, r_max, smoothing, derive_seed(gen_seed, 1000 + i));
        out.manifest["mdps"].push_back(content_hash(mdp_to_json(mdp)));
        auto agent = td0_operator(mdp, Policy::uniform(S, A), features);
        out.ops.push_back(std::move(agent.op));
        out.chains.push_back(std::move(agent.chain));
      }
      out.features = std::move(features);
      break;
    }
    case Task::QLearning: {
      const auto instance = get_or<std::string>(tp, "instance", "single_state");
      const auto gen_seed = get_or<std::uint64_t>(tp, "generator_seed", c.seed);
      out.manifest["mdps"] = json::array();
      for (std::size_t i = 0; i < c.N; ++i) {
        MDP mdp;
        if (instance == "single_state") {
          mdp = single_state_mdp(tp);
        } else if (instance == "random") {
          mdp = make_random_mdp(get_or<std::size_t>(tp, "S", 2), get_or<std::size_t>(tp, "A", 2),
                                get_or<double>(tp, "gamma", 0.5), get_or<double>(tp, "R_max", 1.0),
                                get_or<double>(tp, "smoothing", 0.05), derive_seed(gen_seed, 2000 + i));
        } else {
          throw Error(ErrorKind::Config, "qlearning instance must be 'single_state' or 'random'");
        }
        if (!out.features) {
          out.features = tp.contains("features") ? features_from_json(tp.at("features"))
                                                 : tabular_features(mdp.S, mdp.A);
          out.manifest["features"] = content_hash(features_to_json(*out.features));
        }
        out.manifest["mdps"].push_back(content_hash(mdp_to_json(mdp)));
        auto agent = q_learning_operator(mdp, Policy::uniform(mdp.S, mdp.A), *out.features);
        out.ops.push_back(std::move(agent.op));
        out.chains.push_back(std::move(agent.chain));
      }
      break;
    }
    case Task::LinearFile: {
      const auto path = get_or<std::string>(tp, "federation_file", "");
      if (path.empty()) throw Error(ErrorKind::Config, "linear_file task needs task_params.federation_file");
      const json doc = read_json_file(path);
      out.manifest["federation"] = content_hash(doc);
      auto parts = federation_parts_from_json(doc);
      if (parts.ops.size() != c.N) {
        throw Error(ErrorKind::Config, "federation file has " + std::to_string(parts.ops.size()) +
                                           " agents but config N = " + std::to_string(c.N));
      }
      out.ops = std::move(parts.ops);
      out.chains = std::move(parts.chains);
      break;
    }
  }
  if (c.d != 0 && !out.ops.empty() && out.ops.front().dim() != c.d) {
    throw Error(ErrorKind::Config, "config d = " + std::to_string(c.d) + " but the task has dimension " +
                                       std::to_string(out.ops.front().dim()));
  }
  return out;
}

std::vector<std::size_t> make_grid(const ExperimentConfig& c, std::initializer_list<std::size_t> forced) {
  std::set<std::size_t> ks;
  const auto rounds = c.rounds;
  if (c.record.all) {
    for (std::size_t k = 0; k <= rounds; ++k) ks.insert(k);
  } else {
    ks.insert(0);
    ks.insert(rounds);
    const std::size_t points = std::max<std::size_t>(c.record.points, 2);
    const double top = std::log(static_cast<double>(std::max<std::size_t>(rounds, 1)));
    for (std::size_t j = 0; j < points; ++j) {
      const double v = std::exp(top * static_cast<double>(j) / static_cast<double>(points - 1));
      ks.insert(std::min(rounds, static_cast<std::size_t>(std::llround(v))));
    }
    if (c.record.tail_fraction > 0.0) {
      const auto start = static_cast<std::size_t>(std::floor((1.0 - c.record.tail_fraction) * static_cast<double>(rounds)));
      for (std::size_t k = start; k <= rounds; ++k) ks.insert(k);
    }
  }
  for (auto k : forced) {
    if (k <= rounds) ks.insert(k);
  }
  return {ks.begin(), ks.end()};
}

}  // namespace

Prepared prepare(const ExperimentConfig& config) {
  Prepared p;
  p.config = config;
  auto comps = build_components(config);
  p.features = std::move(comps.features);
  p.manifest = std::move(comps.manifest);
  p.federation = build_federation(std::move(comps.ops), std::move(comps.chains));
  const auto& fed = p.federation;
  const auto& c = fed.constants;
  const auto N = fed.N();
  const auto H = config.H;

  p.mixing = MixingTable(fed.chains);
  auto table = std::make_shared<MixingTable>(p.mixing);
  p.tau_fn = [table](double alpha) { return table->tau(alpha); };

  std::vector<double> alphas;
  if (config.schedule.kind == StepSchedule::Kind::Constant) {
    p.alpha_max = max_constant_step(c, N, H, p.tau_fn);
    const double alpha = config.schedule.alpha_auto ? p.alpha_max * config.schedule.scale : config.schedule.alpha;
    p.schedule = StepSchedule::constant(alpha);
    p.tau = p.tau_fn(alpha);
    alphas.push_back(alpha);
  } else {
    const double theorem = 2.0 * static_cast<double>(N) / (static_cast<double>(H) * c.mu);
    double alpha0 = config.schedule.alpha0;
    if (config.schedule.alpha0_mode == "theorem") alpha0 = theorem;
    if (config.schedule.alpha0_mode == "theorem_capped") alpha0 = std::min(theorem, 1.0 / c.L);
    p.schedule = StepSchedule::harmonic(alpha0);
    if (config.compute_k_star) {
      try {
        p.K_star = find_K_star(p.schedule, c, N, H, p.tau_fn, config.indexing);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NotFoundWithinCap) throw;
      }
    }
    if (p.K_star) {
      const double a = round_step(p.schedule, *p.K_star, H, config.indexing);
      p.tau = p.tau_fn(a);
      alphas.push_back(a);
    }
  }
  if (config.rounds_auto) {
    if (config.schedule.kind == StepSchedule::Kind::Harmonic) {
      if (!p.K_star) throw Error(ErrorKind::Config, "rounds = \"auto\" needs K*, which was not found");
      p.config.rounds = 50 * std::max<std::size_t>(*p.K_star, 50);
    } else {
      p.config.rounds = 5000;
    }
    p.config.rounds_auto = false;
  }
  alphas.push_back(round_step(p.schedule, p.config.rounds, H, config.indexing));

  // Geometric constant over a 10-point grid in [1e-4, 1e-1] plus the steps in use.
  for (int j = 0; j < 10; ++j) alphas.push_back(std::pow(10.0, -4.0 + 3.0 * j / 9.0));
  for (double a : alphas) {
    if (a > 0.0 && a < 1.0) {
      p.C = std::max(p.C, static_cast<double>(p.tau_fn(a)) / std::log(1.0 / a));
    }
  }
  p.params = make_bound_params(fed, H, p.C, p.tau_fn);

  const auto d = static_cast<Eigen::Index>(fed.dim());
  if (config.theta0.is_string()) {
    p.theta0 = config.theta0 == "theta_star" ? fed.theta_star : Vector(Vector::Zero(d));
  } else {
    p.theta0 = vector_from_json(config.theta0);
    if (p.theta0.size() != d) throw Error(ErrorKind::Config, "theta0 length differs from the task dimension");
  }
  const bool constant = config.schedule.kind == StepSchedule::Kind::Constant;
  p.grid = make_grid(p.config, {constant ? p.tau : p.K_star.value_or(p.config.rounds)});
  return p;
}

// Slope fitting ----------------------------------------------------------

SlopeFit fit_loglog_slope(const std::vector<std::size_t>& ks, const std::vector<double>& mse,
                          std::size_t k_min, std::size_t k_max) {
  if (ks.size() != mse.size()) throw Error(ErrorKind::DimensionMismatch, "ks and mse differ in length");
  if (!(k_max > k_min && k_min >= 1)) throw Error(ErrorKind::InvalidArgument, "need k_max > k_min >= 1");
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < ks.size(); ++j) {
    if (ks[j] < k_min || ks[j] > k_max) continue;
    if (!(mse[j] > 0.0)) {
      throw Error(ErrorKind::NonPositiveMSE, "mse at k = " + std::to_string(ks[j]) + " is not positive");
    }
    const double x = std::log(static_cast<double>(ks[j]));
    const double y = std::log(mse[j]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
    ++n;
  }
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "fewer than two points in the fit window");
  const double nn = static_cast<double>(n);
  const double vx = sxx - sx * sx / nn;
  const double vy = syy - sy * sy / nn;
  const double cxy = sxy - sx * sy / nn;
  SlopeFit fit;
  fit.slope = cxy / vx;
  fit.intercept = (sy - fit.slope * sx) / nn;
  fit.r_squared = vy > 0.0 ? (cxy * cxy) / (vx * vy) : 1.0;
  fit.k_min = k_min;
  fit.k_max = k_max;
  fit.points = n;
  return fit;
}

SlopeFit fit_loglog_slope(const std::vector<double>& mse, std::size_t k_min, std::size_t k_max) {
  std::vector<std::size_t> ks(mse.size());
  for (std::size_t k = 0; k < ks.size(); ++k) ks[k] = k;
  return fit_loglog_slope(ks, mse, k_min, k_max);
}

// Running ----------------------------------------------------------------

namespace {

AlgorithmConfig algorithm_config(const Prepared& p) {
  AlgorithmConfig a;
  a.H = p.config.H;
  a.rounds = p.config.rounds;
  a.schedule = p.schedule;
  a.indexing = p.config.indexing;
  a.record_locals = p.config.record_locals;
  a.theta0 = p.theta0;
  a.initial_state = p.config.initial_state;
  return a;
}

struct TrialOutput {
  std::vector<double> mse;
  std::optional<Trajectory> trajectory;
};

TrialOutput run_trial(const Prepared& p, std::size_t trial) {
  TrialOutput out;
  out.mse.reserve(p.grid.size());
  const auto seed = derive_seed(p.config.seed, trial);
  const auto& star = p.federation.theta_star;
  const auto algo = algorithm_config(p);
  if (algo.record_locals) {
    out.trajectory = run_local_sa(p.federation, algo, seed);
    for (auto k : p.grid) out.mse.push_back((out.trajectory->bar_theta[k] - star).squaredNorm());
    return out;
  }
  LocalSAEngine engine(p.federation, algo, seed);
  std::size_t next = 0;
  for (std::size_t k = 0; k <= algo.rounds; ++k) {
    if (next < p.grid.size() && p.grid[next] == k) {
      out.mse.push_back((engine.bar_theta() - star).squaredNorm());
      ++next;
    }
    if (k < algo.rounds) engine.step();
  }
  return out;
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t j = 0; j < count; ++j) fn(j);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t j = next.fetch_add(1);
        if (j >= count) return;
        try {
          fn(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(count);
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t grid_index(const std::vector<std::size_t>& grid, std::size_t k) {
  const auto it = std::lower_bound(grid.begin(), grid.end(), k);
  return (it != grid.end() && *it == k) ? static_cast<std::size_t>(it - grid.begin()) : grid.size();
}

json slope_json(const std::optional<SlopeFit>& fit) {
  if (!fit) return nullptr;
  if (std::isinf(fit->slope)) return {{"slope", "-inf"}, {"k_min", fit->k_min}, {"k_max", fit->k_max}};
  return {{"slope", fit->slope}, {"intercept", fit->intercept}, {"r_squared", fit->r_squared},
          {"k_min", fit->k_min}, {"k_max", fit->k_max}, {"points", fit->points}};
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

CheckReport merge_reports(const std::vector<CheckReport>& parts) {
  CheckReport merged;
  if (parts.empty()) return merged;
  merged.name = parts.front().name;
  merged.statistical = parts.front().statistical;
  bool first = true;
  for (const auto& part : parts) {
    if (part.total_checks > 0) {
      merged.worst_margin = first ? part.worst_margin : std::min(merged.worst_margin, part.worst_margin);
      first = false;
    }
    merged.total_checks += part.total_checks;
    merged.violations += part.violations;
    for (const auto& v : part.details) {
      if (merged.details.size() < CheckReport::kMaxDetails) merged.details.push_back(v);
    }
    for (const auto& [key, value] : part.info) merged.info[key] += value;
  }
  return merged;
}

std::vector<CheckReport> trajectory_checks(const Prepared& p, const std::vector<Trajectory>& trajectories) {
  std::vector<CheckReport> reports;
  const auto& checks = p.config.checks;
  const bool want_iterates = std::find(checks.begin(), checks.end(), "iterate_bounds") != checks.end();
  const bool want_drift = std::find(checks.begin(), checks.end(), "consensus_drift") != checks.end();
  if (!want_iterates && !want_drift) return reports;
  const bool harmonic = p.schedule.kind == StepSchedule::Kind::Harmonic;
  MonitorOptions options;
  options.indexing = p.config.indexing;
  const bool skip = harmonic && !p.K_star;
  if (harmonic && p.K_star) options.first_round = *p.K_star;

  auto run = [&](auto&& monitor, const char* name) {
    std::vector<CheckReport> parts;
    if (!skip) {
      for (const auto& traj : trajectories) parts.push_back(monitor(traj));
    }
    CheckReport merged = merge_reports(parts);
    if (merged.name.empty()) merged.name = name;
    if (skip) merged.info["skipped_without_K_star"] = 1.0;
    reports.push_back(std::move(merged));
  };
  if (want_iterates) {
    run([&](const Trajectory& t) { return check_iterate_bounds(t, p.params, p.schedule, options); },
        harmonic ? "iterate_bounds_timevarying" : "iterate_bounds_constant");
  }
  if (want_drift) {
    run([&](const Trajectory& t) { return check_consensus_drift(t, p.params, p.schedule, options); },
        harmonic ? "consensus_drift_timevarying" : "consensus_drift_constant");
  }
  return reports;
}

bool ExperimentResult::checks_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckReport& r) { return r.passed(); });
}

std::string trace_csv(const ExperimentResult& result) {
  const auto& p = result.prepared;
  std::string out = "trial,k,mse,alpha_k,bound\n";
  for (std::size_t trial = 0; trial < result.trial_mse.size(); ++trial) {
    for (std::size_t j = 0; j < p.grid.size(); ++j) {
      const auto k = p.grid[j];
      out += std::to_string(trial);
      out += ',';
      out += std::to_string(k);
      out += ',';
      out += format_double(result.trial_mse[trial][j]);
      out += ',';
      out += format_double(round_step(p.schedule, k, p.config.H, p.config.indexing));
      out += ',';
      if (std::isfinite(result.bound[j])) out += format_double(result.bound[j]);
      out += '\n';
    }
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  ExperimentResult result;
  result.prepared = prepare(config);
  const auto& p = result.prepared;
  const auto trials = p.config.trials;
  const std::size_t threads = options.threads == 0 ? default_thread_count() : options.threads;

  std::vector<TrialOutput> outputs(trials);
  parallel_for(trials, threads, [&](std::size_t trial) { outputs[trial] = run_trial(p, trial); });

  const auto points = p.grid.size();
  result.avg_mse.assign(points, 0.0);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    for (std::size_t j = 0; j < points; ++j) result.avg_mse[j] += outputs[trial].mse[j];
    result.trial_mse.push_back(std::move(outputs[trial].mse));
    if (outputs[trial].trajectory) result.trajectories.push_back(std::move(*outputs[trial].trajectory));
  }
  for (auto& v : result.avg_mse) v /= static_cast<double>(trials);

  // Bound overlay: the theorems bound round k + 1 from round k >= tau (or K*).
  result.bound.assign(points, kNaN);
  const bool constant = p.schedule.kind == StepSchedule::Kind::Constant;
  const std::size_t start = constant ? p.tau : p.K_star.value_or(std::numeric_limits<std::size_t>::max());
  const std::size_t start_index = grid_index(p.grid, start);
  if (start_index < points) {
    const double e_start = result.avg_mse[start_index];
    for (std::size_t j = start_index + 1; j < points; ++j) {
      const auto k = p.grid[j];
      try {
        result.bound[j] = constant ? bound_constant_step(k - 1, p.schedule.alpha, p.params, e_start)
                                   : bound_timevarying(k - 1, p.schedule.alpha, start, p.params, e_start);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::InadmissibleStep) throw;
      }
    }
  }

  const auto rounds = p.config.rounds;
  {
    const std::size_t k_lo = constant ? std::max<std::size_t>(p.tau, 1) : std::max<std::size_t>(p.K_star.value_or(0), 50);
    const std::size_t k_hi = constant ? rounds : std::min(rounds, 50 * k_lo);
    try {
      if (k_hi > k_lo) result.slope = fit_loglog_slope(p.grid, result.avg_mse, k_lo, k_hi);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NonPositiveMSE) {
        // Exact convergence inside the window.
        SlopeFit fit;
        fit.slope = -std::numeric_limits<double>::infinity();
        fit.k_min = k_lo;
        fit.k_max = k_hi;
        result.slope = fit;
      } else if (e.kind() != ErrorKind::InvalidArgument) {
        throw;
      }
    }
  }
  {
    const double tail_start = 0.8 * static_cast<double>(rounds);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < points; ++j) {
      if (static_cast<double>(p.grid[j]) >= tail_start && p.grid[j] > 0) {
        sum += result.avg_mse[j];
        ++n;
      }
    }
    result.plateau = n ? sum / static_cast<double>(n) : kNaN;
  }

  result.checks = trajectory_checks(p, result.trajectories);
  const auto& checks = p.config.checks;
  if (std::find(checks.begin(), checks.end(), "bound_domination") != checks.end()) {
    CheckReport report;
    report.name = constant ? "bound_domination_constant" : "bound_domination_timevarying";
    for (std::size_t j = 0; j < points; ++j) {
      if (std::isfinite(result.bound[j])) report.record(result.avg_mse[j], result.bound[j], p.grid[j], 0, 0, "mse");
    }
    result.checks.push_back(std::move(report));
  }
  if (std::find(checks.begin(), checks.end(), "bias_mc") != checks.end()) {
    const std::size_t k = constant ? p.tau + 1 : p.K_star.value_or(0);
    if (!constant && !p.K_star) {
      CheckReport report;
      report.name = "bias_bound_timevarying";
      report.statistical = true;
      report.info["skipped_without_K_star"] = 1.0;
      result.checks.push_back(std::move(report));
    } else {
      auto algo = algorithm_config(p);
      result.checks.push_back(check_bias_bound_mc(p.federation, algo, p.params, k,
                                                  std::max<std::size_t>(p.config.bias_trials, 2),
                                                  derive_seed(p.config.seed, 0xb1a5)));
    }
  }

  // Summary.
  const auto& c = p.federation.constants;
  json summary;
  summary["config"] = to_json(p.config);
  summary["manifest"] = p.manifest;
  summary["theta_star"] = to_json(p.federation.theta_star);
  summary["constants"] = {{"B", c.B},
                          {"B0", c.B0},
                          {"L", c.L},
                          {"mu", c.mu},
                          {"sum_mu", c.sum_mu},
                          {"empirical", c.empirical},
                          {"C", p.C},
                          {"tau", p.tau},
                          {"K_star", p.K_star ? json(*p.K_star) : json(nullptr)},
                          {"alpha", p.schedule.alpha},
                          {"alpha_max", constant ? json(p.alpha_max) : json(nullptr)}};
  summary["k"] = p.grid;
  json avg = json::array();
  json bound = json::array();
  for (std::size_t j = 0; j < points; ++j) {
    avg.push_back(number_or_null(result.avg_mse[j]));
    bound.push_back(number_or_null(result.bound[j]));
  }
  summary["avg_mse"] = avg;
  summary["bound"] = bound;
  summary["slope"] = slope_json(result.slope);
  summary["plateau"] = number_or_null(result.plateau);
  summary["checks"] = json::array();
  for (const auto& r : result.checks) summary["checks"].push_back(to_json(r));
  result.summary = summary;

  if (options.write_files && !p.config.output.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(p.config.output);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create output directory '" + dir.string() + "': " + ec.message());
    write_text_file((dir / "trace.csv").string(), trace_csv(result));
    write_text_file((dir / "summary.json").string(), summary.dump(2) + "\n");
    for (std::size_t trial = 0; trial < result.trajectories.size(); ++trial) {
      std::ofstream out(dir / ("trajectory_" + std::to_string(trial) + ".bin"), std::ios::binary);
      if (!out) throw Error(ErrorKind::Io, "cannot write trajectory log");
      write_trajectory(out, result.trajectories[trial]);
    }
  }
  return result;
}

// Assumption validation -------------------------------------------------

json validate_assumptions(const ExperimentConfig& config) {
  json entries = json::array();
  bool pass = true;
  auto add = [&](const std::string& name, std::optional<std::size_t> agent, bool ok, json value,
                 const std::string& detail) {
    json e = {{"name", name}, {"pass", ok}, {"value", std::move(value)}, {"detail", detail}};
    e["agent"] = agent ? json(*agent) : json(nullptr);
    entries.push_back(std::move(e));
    pass = pass && ok;
  };

  Components comps;
  try {
    comps = build_components(config);
  } catch (const Error& e) {
    add("construction", std::nullopt, false, nullptr, e.what());
    return {{"pass", false}, {"entries", entries}};
  }

  RandomStream rng(derive_seed(config.seed, 0xa55e));
  double L = 0.0;
  double mu = std::numeric_limits<double>::infinity();
  double B0 = 0.0;
  std::vector<Vector> pis(comps.ops.size());
  std::vector<bool> have_pi(comps.ops.size(), false);
  for (std::size_t i = 0; i < comps.ops.size(); ++i) {
    const auto& chain = comps.chains[i];
    const auto& cert = chain.certificate();
    add("ergodicity", i, cert.ergodic, cert.period,
        cert.ergodic ? "irreducible and aperiodic" : "chain " + std::to_string(i) + ": " + cert.reason);
    if (cert.ergodic) {
      pis[i] = stationary_distribution(chain).pi;
      have_pi[i] = true;
    }
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(comps.ops[i].dim()));
    for (std::size_t x = 0; x < comps.ops[i].n_states(); ++x) B0 = std::max(B0, comps.ops[i].eval(zero, x).norm());
    if (!have_pi[i]) {
      add("lipschitz", i, false, nullptr, "skipped: no stationary distribution");
      add("strong_monotonicity", i, false, nullptr, "skipped: no stationary distribution");
      continue;
    }
    const auto lip = verify_lipschitz(comps.ops[i], pis[i], 2000, rng);
    const double L_i = std::max(lip.L_hat, comps.ops[i].lipschitz_bound());
    add("lipschitz", i, lip.pass, L_i, lip.empirical ? "empirical probe maximum" : "exact spectral norm");
    const auto mono = verify_strong_monotonicity(comps.ops[i], pis[i], 2000, rng);
    add("strong_monotonicity", i, mono.pass, mono.mu_hat,
        mono.empirical ? "empirical probe minimum" : "exact smallest eigenvalue");
    L = std::max(L, L_i);
    mu = std::min(mu, mono.mu_hat);
  }
  const double B = std::max(B0, L);
  add("growth_constant", std::nullopt, std::isfinite(B), {{"B0", B0}, {"B", B}},
      "B0 = max ||F_i(0,x)||; bounds use B = max(B0, L)");
  if (std::isfinite(mu)) add("mu_le_L", std::nullopt, mu <= L + 1e-12, {{"mu", mu}, {"L", L}}, "0 < mu <= L");

  // Growth bound on 1000 probes with ||theta|| <= 10.
  std::size_t violations = 0;
  std::size_t literal_violations = 0;
  for (int probe = 0; probe < 1000 && !comps.ops.empty(); ++probe) {
    const auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(comps.ops.size()));
    const auto& op = comps.ops[i];
    Vector theta(static_cast<Eigen::Index>(op.dim()));
    for (Eigen::Index j = 0; j < theta.size(); ++j) theta(j) = rng.normal();
    theta *= 10.0 * rng.uniform() / std::max(theta.norm(), 1e-300);
    const auto x = static_cast<std::size_t>(rng.uniform() * static_cast<double>(op.n_states()));
    double worst = op.eval(theta, x).norm();
    if (have_pi[i]) worst = std::max(worst, mean_operator(op, pis[i], theta).norm());
    const double scale = theta.norm() + 1.0;
    if (worst > B * scale * (1.0 + 1e-12)) ++violations;
    if (worst > B0 * scale * (1.0 + 1e-12)) ++literal_violations;
  }
  add("growth_bound", std::nullopt, violations == 0,
      {{"violations", violations}, {"violations_with_B0", literal_violations}},
      "||F(theta,x)|| <= B(||theta||+1) on 1000 probes with ||theta|| <= 10");

  if (comps.features) {
    const auto fc = validate_features(*comps.features);
    add("features", std::nullopt, fc.pass(), {{"rank", fc.rank}, {"max_row_norm", fc.max_row_norm}},
        fc.full_rank ? (fc.norms_ok ? "full column rank, rows within the unit ball" : "row norm exceeds 1")
                     : "rank deficient");
  }
  return {{"pass", pass}, {"entries", entries}};
}

}  // namespace localsa
