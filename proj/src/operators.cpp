#include "localsa/operators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "localsa/error.hpp"
#include "localsa/text.hpp"

namespace localsa {

namespace {

Vector random_probe(std::size_t dim, RandomStream& rng) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index j = 0; j < v.size(); ++j) v(j) = kProbeScale * rng.normal();
  return v;
}

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

double min_sym_eigenvalue(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

void check_pi(const OperatorSpec& op, const Vector& pi) {
  if (static_cast<std::size_t>(pi.size()) != op.n_states()) {
    throw Error(ErrorKind::DimensionMismatch, "distribution has " + std::to_string(pi.size()) +
                                                  " entries, operator has " +
                                                  std::to_string(op.n_states()) + " states");
  }
}

}  // namespace

// OperatorSpec -----------------------------------------------------------

OperatorSpec OperatorSpec::linear(std::vector<Matrix> a, std::vector<Vector> b) {
  if (a.empty() || a.size() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch, "linear operator needs one (A, b) pair per state");
  }
  OperatorSpec op;
  op.kind_ = OperatorKind::Linear;
  op.dim_ = static_cast<std::size_t>(a.front().rows());
  op.n_states_ = a.size();
  if (op.dim_ == 0) throw Error(ErrorKind::InvalidArgument, "operator dimension must be positive");
  const auto d = static_cast<Eigen::Index>(op.dim_);
  op.flat_a_.reserve(op.n_states_ * op.dim_ * op.dim_);
  op.flat_b_.reserve(op.n_states_ * op.dim_);
  for (std::size_t x = 0; x < a.size(); ++x) {
    if (a[x].rows() != d || a[x].cols() != d || b[x].size() != d) {
      throw Error(ErrorKind::DimensionMismatch, "state " + std::to_string(x) +
                                                    ": A must be d x d and b of length d");
    }
    for (Eigen::Index r = 0; r < d; ++r) {
      for (Eigen::Index c = 0; c < d; ++c) op.flat_a_.push_back(a[x](r, c));
    }
    for (Eigen::Index r = 0; r < d; ++r) op.flat_b_.push_back(b[x](r));
    op.lipschitz_bound_ = std::max(op.lipschitz_bound_, spectral_norm(a[x]));
  }
  op.a_ = std::move(a);
  op.b_ = std::move(b);
  return op;
}

OperatorSpec OperatorSpec::nonlinear(std::size_t dim, std::size_t n_states, OperatorFn fn,
                                     double lipschitz_bound) {
  if (dim == 0 || n_states == 0 || !fn) {
    throw Error(ErrorKind::InvalidArgument, "nonlinear operator needs dim, states and a callable");
  }
  OperatorSpec op;
  op.kind_ = OperatorKind::Nonlinear;
  op.dim_ = dim;
  op.n_states_ = n_states;
  op.fn_ = std::move(fn);
  op.lipschitz_bound_ = lipschitz_bound;
  return op;
}

const Matrix& OperatorSpec::a(std::size_t x) const {
  if (!is_linear()) throw Error(ErrorKind::InvalidArgument, "A(x) requested from a nonlinear operator");
  return a_.at(x);
}

const Vector& OperatorSpec::b(std::size_t x) const {
  if (!is_linear()) throw Error(ErrorKind::InvalidArgument, "b(x) requested from a nonlinear operator");
  return b_.at(x);
}

Vector OperatorSpec::eval(const Vector& theta, std::size_t x) const {
  if (static_cast<std::size_t>(theta.size()) != dim_) {
    throw Error(ErrorKind::DimensionMismatch, "theta has length " + std::to_string(theta.size()) +
                                                  ", operator dimension is " + std::to_string(dim_));
  }
  if (x >= n_states_) throw Error(ErrorKind::InvalidArgument, "state index out of range");
  Vector out(static_cast<Eigen::Index>(dim_));
  eval_into(theta.data(), x, out.data());
  return out;
}

// Mean field -------------------------------------------------------------

Vector mean_operator(const OperatorSpec& op, const Vector& pi, const Vector& theta) {
  check_pi(op, pi);
  Vector total = Vector::Zero(static_cast<Eigen::Index>(op.dim()));
  for (std::size_t x = 0; x < op.n_states(); ++x) {
    const double w = pi(static_cast<Eigen::Index>(x));
    if (w != 0.0) total += w * op.eval(theta, x);
  }
  return total;
}

LinearMean linear_mean(const OperatorSpec& op, const Vector& pi) {
  check_pi(op, pi);
  const auto d = static_cast<Eigen::Index>(op.dim());
  LinearMean mean{Matrix::Zero(d, d), Vector::Zero(d)};
  for (std::size_t x = 0; x < op.n_states(); ++x) {
    const double w = pi(static_cast<Eigen::Index>(x));
    mean.a_mean += w * op.a(x);
    mean.b_mean += w * op.b(x);
  }
  return mean;
}

// Validators -------------------------------------------------------------

LipschitzReport verify_lipschitz(const OperatorSpec& op, const Vector& pi, std::size_t probes,
                                 RandomStream& rng) {
  if (probes == 0) throw Error(ErrorKind::InvalidArgument, "verify_lipschitz: probes must be >= 1");
  LipschitzReport report;
  if (op.is_linear()) {
    for (std::size_t x = 0; x < op.n_states(); ++x) {
      report.L_hat = std::max(report.L_hat, spectral_norm(op.a(x)));
    }
    report.L_mean = spectral_norm(linear_mean(op, pi).a_mean);
  } else {
    report.empirical = true;
    for (std::size_t p = 0; p < probes; ++p) {
      const Vector theta = random_probe(op.dim(), rng);
      const Vector omega = random_probe(op.dim(), rng);
      const double gap = (theta - omega).norm();
      if (gap == 0.0) continue;
      const auto x = static_cast<std::size_t>(rng.uniform() * static_cast<double>(op.n_states()));
      report.L_hat = std::max(report.L_hat, (op.eval(theta, x) - op.eval(omega, x)).norm() / gap);
      report.L_mean = std::max(
          report.L_mean, (mean_operator(op, pi, theta) - mean_operator(op, pi, omega)).norm() / gap);
    }
  }
  report.pass = std::isfinite(report.L_hat) && report.L_hat > 0.0;
  return report;
}

MonotonicityReport verify_strong_monotonicity(const OperatorSpec& op, const Vector& pi,
                                              std::size_t probes, RandomStream& rng) {
  if (probes == 0) {
    throw Error(ErrorKind::InvalidArgument, "verify_strong_monotonicity: probes must be >= 1");
  }
  MonotonicityReport report;
  if (op.is_linear()) {
    report.mu_hat = min_sym_eigenvalue(-linear_mean(op, pi).a_mean);
  } else {
    report.empirical = true;
    report.mu_hat = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < probes; ++p) {
      const Vector theta = random_probe(op.dim(), rng);
      const Vector omega = random_probe(op.dim(), rng);
      const Vector diff = theta - omega;
      const double gap2 = diff.squaredNorm();
      if (gap2 == 0.0) continue;
      const double inner = (mean_operator(op, pi, theta) - mean_operator(op, pi, omega)).dot(diff);
      report.mu_hat = std::min(report.mu_hat, inner / gap2);
    }
  }
  report.pass = std::isfinite(report.mu_hat) && report.mu_hat > 0.0;
  return report;
}

// Federation -------------------------------------------------------------

Vector Federation::total_mean(const Vector& theta) const {
  Vector total = Vector::Zero(static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < N(); ++i) total += mean_operator(ops[i], pis[i], theta);
  return total;
}

double estimate_B(const Federation& federation) {
  double b = 0.0;
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(federation.dim()));
  for (const auto& op : federation.ops) {
    for (std::size_t x = 0; x < op.n_states(); ++x) b = std::max(b, op.eval(zero, x).norm());
  }
  return b;
}

Vector solve_root(const Federation& federation) {
  const auto n = federation.N();
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "solve_root: empty federation");
  const auto d = static_cast<Eigen::Index>(federation.dim());
  const bool all_linear = std::all_of(federation.ops.begin(), federation.ops.end(),
                                      [](const OperatorSpec& op) { return op.is_linear(); });
  Vector theta;
  if (all_linear) {
    Matrix a_sum = Matrix::Zero(d, d);
    Vector b_sum = Vector::Zero(d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto mean = linear_mean(federation.ops[i], federation.pis[i]);
      a_sum += mean.a_mean;
      b_sum += mean.b_mean;
    }
    Eigen::FullPivLU<Matrix> lu(a_sum);
    if (lu.rank() < d) {
      throw Error(ErrorKind::SingularSystem, "summed mean matrix is rank deficient (rank " +
                                                 std::to_string(lu.rank()) + " < " +
                                                 std::to_string(d) + ")");
    }
    theta = lu.solve(-b_sum);
  } else {
    const double mu = federation.constants.mu;
    const double L = federation.constants.L;
    if (!(mu > 0.0) || !(L > 0.0)) {
      throw Error(ErrorKind::AssumptionFailed,
                  "damped root iteration needs positive mu and L (mu = " + format_double(mu) + ")");
    }
    const double eta = mu / (L * L);
    theta = Vector::Zero(d);
    bool converged = false;
    for (std::size_t it = 0; it < kRootIterationCap; ++it) {
      const Vector total = federation.total_mean(theta);
      if (total.norm() <= kRootTolerance) {
        converged = true;
        break;
      }
      theta -= (eta / static_cast<double>(n)) * total;
    }
    if (!converged) {
      throw Error(ErrorKind::NoConvergence, "damped root iteration did not reach residual 1e-10 in " +
                                                std::to_string(kRootIterationCap) + " iterations");
    }
  }
  const double residual = federation.total_mean(theta).norm();
  if (!(residual <= 1e-8)) {
    throw Error(ErrorKind::SingularSystem, "root residual " + format_double(residual) + " exceeds 1e-8");
  }
  return theta;
}

Federation build_federation(std::vector<OperatorSpec> ops, std::vector<MarkovChain> chains,
                            const FederationOptions& options) {
  if (ops.empty() || ops.size() != chains.size()) {
    throw Error(ErrorKind::DimensionMismatch, "federation needs one chain per operator");
  }
  Federation fed;
  fed.ops = std::move(ops);
  fed.chains = std::move(chains);
  const auto d = fed.ops.front().dim();
  for (std::size_t i = 0; i < fed.N(); ++i) {
    if (fed.ops[i].dim() != d) {
      throw Error(ErrorKind::DimensionMismatch, "agent " + std::to_string(i) + " has dimension " +
                                                    std::to_string(fed.ops[i].dim()) +
                                                    ", expected " + std::to_string(d));
    }
    if (fed.chains[i].num_states() != fed.ops[i].n_states()) {
      throw Error(ErrorKind::DimensionMismatch,
                  "agent " + std::to_string(i) + ": chain and operator state counts differ");
    }
    fed.pis.push_back(stationary_distribution(fed.chains[i]).pi);
  }

  RandomStream rng(options.probe_seed);
  auto& c = fed.constants;
  c.mu = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < fed.N(); ++i) {
    const auto lip = verify_lipschitz(fed.ops[i], fed.pis[i], options.probes, rng);
    const auto mono = verify_strong_monotonicity(fed.ops[i], fed.pis[i], options.probes, rng);
    // An analytic bound, when the operator carries one, dominates the probe estimate.
    c.L = std::max({c.L, lip.L_hat, fed.ops[i].lipschitz_bound()});
    c.mu = std::min(c.mu, mono.mu_hat);
    c.empirical = c.empirical || lip.empirical || mono.empirical;
    if (options.require_monotone && !mono.pass) {
      throw Error(ErrorKind::AssumptionFailed, "agent " + std::to_string(i) +
                                                   " fails strong monotonicity (mu_hat = " +
                                                   format_double(mono.mu_hat) + ")");
    }
  }
  c.B0 = estimate_B(fed);
  c.B = std::max(c.B0, c.L);

  const bool all_linear = std::all_of(fed.ops.begin(), fed.ops.end(),
                                      [](const OperatorSpec& op) { return op.is_linear(); });
  if (all_linear) {
    Matrix a_sum = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < fed.N(); ++i) a_sum += linear_mean(fed.ops[i], fed.pis[i]).a_mean;
    c.sum_mu = min_sym_eigenvalue(-a_sum);
  } else {
    double sum_mu = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < options.probes; ++p) {
      const Vector theta = random_probe(d, rng);
      const Vector omega = random_probe(d, rng);
      const Vector diff = theta - omega;
      if (diff.squaredNorm() == 0.0) continue;
      sum_mu = std::min(sum_mu, (fed.total_mean(theta) - fed.total_mean(omega)).dot(diff) /
                                    diff.squaredNorm());
    }
    c.sum_mu = sum_mu;
  }

  if (all_linear || c.mu > 0.0) {
    fed.theta_star = solve_root(fed);
    c.theta_star_norm = fed.theta_star.norm();
  }
  return fed;
}

}  // namespace localsa
