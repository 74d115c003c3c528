#include "localsa/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "localsa/error.hpp"
#include "localsa/text.hpp"

namespace localsa {

BoundParams make_bound_params(const Federation& federation, std::size_t H, double C, TauFn tau_fn) {
  const auto& c = federation.constants;
  BoundParams p;
  p.B = c.B;
  p.L = c.L;
  p.mu = c.mu;
  p.N = federation.N();
  p.H = H;
  p.C = C;
  p.theta_star_norm = c.theta_star_norm;
  p.tau_fn = std::move(tau_fn);
  return p;
}

void CheckReport::record(double lhs, double rhs, std::size_t k, std::size_t agent, std::size_t t,
                         const char* what) {
  const double margin = rhs - lhs;
  if (total_checks == 0 || margin < worst_margin) worst_margin = margin;
  ++total_checks;
  const bool ok = lhs <= rhs + 1e-12 * std::max(1.0, std::abs(rhs));
  if (!ok) {
    ++violations;
    if (details.size() < kMaxDetails) details.push_back({k, agent, t, what, lhs, rhs});
  }
}

double theorem_factor(const BoundParams& p) {
  const double h = static_cast<double>(p.H);
  return p.B * p.B * h + 9.0 + 3.0 * (19.0 * p.L + 6.0 * p.B) * p.B * h;
}

double bound_constant_step(std::size_t k, double alpha, const BoundParams& p, double E_tau) {
  const double n = static_cast<double>(p.N);
  const double h = static_cast<double>(p.H);
  const double rate = h * p.mu * alpha / n;
  if (!(rate < 1.0) || !(alpha > 0.0)) {
    throw Error(ErrorKind::InadmissibleStep, "H mu alpha / N = " + format_double(rate) + " is not below 1");
  }
  const std::size_t tau = p.tau_fn ? p.tau_fn(alpha) : 0;
  if (k < tau) {
    throw Error(ErrorKind::WindowUnderflow,
                "constant-step bound needs k >= tau (k = " + std::to_string(k) + ", tau = " + std::to_string(tau) + ")");
  }
  const double shift = (p.theta_star_norm + 1.0) * (p.theta_star_norm + 1.0);
  const double decay = std::pow(1.0 - rate, static_cast<double>(k + 1 - tau)) * E_tau;
  const double floor = 8.0 * n * p.C * theorem_factor(p) * shift / p.mu * std::log(1.0 / alpha) * alpha;
  return decay + floor;
}

double bound_timevarying(std::size_t k, double alpha0, std::size_t K_star, const BoundParams& p,
                         double E_Kstar) {
  if (k < K_star) {
    throw Error(ErrorKind::WindowUnderflow,
                "time-varying bound needs k >= K* (k = " + std::to_string(k) + ", K* = " + std::to_string(K_star) + ")");
  }
  const double kk = static_cast<double>(k) + 1.0;
  const double ks = static_cast<double>(K_star);
  const double shift = (p.theta_star_norm + 1.0) * (p.theta_star_norm + 1.0);
  const double first = ks * ks * E_Kstar / (kk * kk);
  const double second = 16.0 * alpha0 * alpha0 * p.C * static_cast<double>(p.H) * theorem_factor(p) *
                        shift * std::log(kk / alpha0) / kk;
  return first + second;
}

namespace {

void require_locals(const Trajectory& traj, const char* who) {
  if (!traj.has_locals()) {
    throw Error(ErrorKind::InvalidArgument, std::string(who) + " needs a trajectory with recorded locals");
  }
}

}  // namespace

CheckReport check_iterate_bounds(const Trajectory& traj, const BoundParams& p,
                                 const StepSchedule& schedule, const MonitorOptions& options) {
  require_locals(traj, "check_iterate_bounds");
  CheckReport report;
  report.name = schedule.kind == StepSchedule::Kind::Constant ? "iterate_bounds_constant"
                                                              : "iterate_bounds_timevarying";
  const double bh = p.B * static_cast<double>(traj.H);
  for (std::size_t k = options.first_round; k < traj.rounds; ++k) {
    const double a = round_step(schedule, k, traj.H, options.indexing);
    const Vector& bar = traj.bar_theta[k];
    const double nb = bar.norm();
    for (std::size_t i = 0; i < traj.N; ++i) {
      for (std::size_t t = 0; t <= traj.H; ++t) {
        const Vector& local = traj.local(k, i, t);
        report.record(local.norm(), 2.0 * nb + 2.0 * bh * a, k, i, t, "norm");
        report.record((local - bar).norm(), 2.0 * bh * a * (nb + 1.0), k, i, t, "deviation");
      }
    }
  }
  return report;
}

CheckReport check_consensus_drift(const Trajectory& traj, const BoundParams& p,
                                  const StepSchedule& schedule, const MonitorOptions& options) {
  if (!p.tau_fn) throw Error(ErrorKind::InvalidArgument, "check_consensus_drift needs tau_fn");
  CheckReport report;
  const bool constant = schedule.kind == StepSchedule::Kind::Constant;
  report.name = constant ? "consensus_drift_constant" : "consensus_drift_timevarying";
  const double bh = p.B * static_cast<double>(traj.H);
  auto round_alpha = [&](std::size_t k) { return round_step(schedule, k, traj.H, options.indexing); };
  for (std::size_t k = options.first_round; k <= traj.rounds; ++k) {
    const double a = round_alpha(k);
    const std::size_t tau = p.tau_fn(a);
    if (k < tau) continue;
    const double w = constant ? a * static_cast<double>(tau) : alpha_window_sum(round_alpha, k, tau);
    const Vector& bar = traj.bar_theta[k];
    const double nb = bar.norm();
    const double drift = (bar - traj.bar_theta[k - tau]).norm();
    report.record(drift, 12.0 * bh * w * (nb + 1.0), k, 0, tau, "drift");
    report.record(drift * drift, 288.0 * bh * bh * w * w * (nb * nb + 1.0), k, 0, tau, "drift_squared");
  }
  return report;
}

CheckReport check_mixing_bias(const OperatorSpec& op, const MarkovChain& chain, const Vector& theta,
                              double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0,1)");
  if (chain.num_states() != op.n_states()) {
    throw Error(ErrorKind::DimensionMismatch, "chain and operator state counts differ");
  }
  CheckReport report;
  report.name = "mixing_bias";
  const auto pi = stationary_distribution(chain).pi;
  const auto tau = mixing_time(chain, alpha).tau;
  const auto n = static_cast<Eigen::Index>(chain.num_states());
  const auto d = static_cast<Eigen::Index>(op.dim());

  Matrix values(n, d);  // row x holds F(theta; x)
  for (Eigen::Index x = 0; x < n; ++x) values.row(x) = op.eval(theta, static_cast<std::size_t>(x)).transpose();
  const Vector mean = mean_operator(op, pi, theta);
  const double threshold = alpha * (theta.norm() + 1.0);

  Matrix power = Matrix::Identity(n, n);
  for (std::size_t k = 0; k < tau; ++k) power = power * chain.transition();
  double euclid_violations = 0.0;
  double worst_euclid = 0.0;
  for (std::size_t k = tau; k <= tau + kMixingBiasExtraSteps; ++k) {
    const Matrix conditional = power * values;  // row x0 holds E[F(theta, X^k) | X^0 = x0]
    for (Eigen::Index x0 = 0; x0 < n; ++x0) {
      const Vector dev = conditional.row(x0).transpose() - mean;
      for (Eigen::Index j = 0; j < d; ++j) {
        report.record(std::abs(dev(j)), threshold, k, static_cast<std::size_t>(x0),
                      static_cast<std::size_t>(j), "coordinate");
      }
      const double e = dev.norm();
      worst_euclid = std::max(worst_euclid, e);
      if (e > threshold) euclid_violations += 1.0;
    }
    power = power * chain.transition();
  }
  report.info["tau"] = static_cast<double>(tau);
  report.info["threshold"] = threshold;
  report.info["euclidean_violations"] = euclid_violations;
  report.info["worst_euclidean_deviation"] = worst_euclid;
  return report;
}

CheckReport check_bias_bound_mc(const Federation& fed, const AlgorithmConfig& config,
                                const BoundParams& p, std::size_t k, std::size_t trials,
                                std::uint64_t seed) {
  if (trials < 2) throw Error(ErrorKind::InvalidArgument, "check_bias_bound_mc needs at least 2 trials");
  if (!p.tau_fn) throw Error(ErrorKind::InvalidArgument, "check_bias_bound_mc needs tau_fn");
  const bool constant = config.schedule.kind == StepSchedule::Kind::Constant;
  const std::size_t H = config.H;
  auto round_alpha = [&](std::size_t r) { return round_step(config.schedule, r, H, config.indexing); };
  const double a = round_alpha(k);
  const std::size_t tau = p.tau_fn(a);
  if (k < tau) {
    throw Error(ErrorKind::WindowUnderflow,
                "bias check needs k >= tau (k = " + std::to_string(k) + ", tau = " + std::to_string(tau) + ")");
  }

  AlgorithmConfig run = config;
  run.rounds = k + 1;
  run.record_locals = true;
  double sum = 0.0;
  double sum_sq = 0.0;
  double err_sum = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    // Only round k is recorded; earlier rounds just advance the engine.
    LocalSAEngine engine(fed, run, derive_seed(seed, trial));
    for (std::size_t r = 0; r < k; ++r) engine.step();
    Trajectory traj;
    traj.N = fed.N();
    traj.H = H;
    traj.rounds = 1;
    traj.dim = fed.dim();
    const Vector bar = engine.bar_theta();
    engine.step(&traj);
    const Vector gap = bar - fed.theta_star;
    double lhs = 0.0;
    for (std::size_t i = 0; i < fed.N(); ++i) {
      const Vector mean = mean_operator(fed.ops[i], fed.pis[i], bar);
      for (std::size_t t = 0; t < H; ++t) {
        const Vector f = fed.ops[i].eval(traj.local(0, i, t), traj.sample(0, i, t));
        const double weight = constant ? 1.0 : traj.alpha(0, t);
        lhs -= weight * gap.dot(f - mean);
      }
    }
    sum += lhs;
    sum_sq += lhs * lhs;
    err_sum += gap.squaredNorm();
  }
  const double count = static_cast<double>(trials);
  const double estimate = sum / count;
  const double variance = std::max(0.0, (sum_sq - count * estimate * estimate) / (count - 1.0));
  const double se = std::sqrt(variance / count);
  const double E = err_sum / count;

  const double n = static_cast<double>(fed.N());
  const double h = static_cast<double>(H);
  const double shift = (1.0 + p.theta_star_norm) * (1.0 + p.theta_star_norm);
  const double coupling = 12.0 * (19.0 * p.L + 6.0 * p.B) * n * p.B * h * h;
  double rhs = 0.0;
  if (constant) {
    rhs = 36.0 * n * h * a * (E + shift) + coupling * a * static_cast<double>(tau) * (E + shift);
  } else {
    const double w = alpha_window_sum(round_alpha, k, tau);
    rhs = 36.0 * n * h * a * a * (E + shift) + coupling * a * w * (E + shift);
  }

  CheckReport report;
  report.name = constant ? "bias_bound_constant" : "bias_bound_timevarying";
  report.statistical = true;
  report.record(estimate, rhs + 3.0 * se, k, 0, 0, "bias");
  report.info["estimate"] = estimate;
  report.info["standard_error"] = se;
  report.info["rhs"] = rhs;
  report.info["mse"] = E;
  report.info["tau"] = static_cast<double>(tau);
  report.info["trials"] = count;
  return report;
}

}  // namespace localsa
