#include "localsa/markov_chain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>

#include "localsa/error.hpp"
#include "localsa/text.hpp"

namespace localsa {

namespace {

void validate_stochastic(const Matrix& p) {
  if (p.rows() == 0 || p.rows() != p.cols()) {
    throw Error(ErrorKind::InvalidArgument, "transition matrix must be square and non-empty");
  }
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "transition entry (" + std::to_string(i) + "," +
                                                    std::to_string(j) + ") outside [0,1]");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > MarkovChain::kRowTolerance) {
      throw Error(ErrorKind::InvalidArgument,
                  "row " + std::to_string(i) + " sums to " + format_double(sum));
    }
  }
}

std::vector<std::size_t> bfs_levels(const Matrix& p, bool reverse, std::vector<long>& level) {
  const auto n = static_cast<std::size_t>(p.rows());
  level.assign(n, -1);
  std::queue<std::size_t> frontier;
  level[0] = 0;
  frontier.push(0);
  std::vector<std::size_t> order;
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    order.push_back(u);
    for (std::size_t v = 0; v < n; ++v) {
      const double w = reverse ? p(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u))
                               : p(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v));
      if (w > 0.0 && level[v] < 0) {
        level[v] = level[u] + 1;
        frontier.push(v);
      }
    }
  }
  return order;
}

double max_tv_to(const Matrix& rows, const Vector& pi) {
  double worst = 0.0;
  for (Eigen::Index x = 0; x < rows.rows(); ++x) {
    worst = std::max(worst, 0.5 * (rows.row(x).transpose() - pi).cwiseAbs().sum());
  }
  return worst;
}

}  // namespace

MarkovChain::MarkovChain(Matrix transition, std::vector<std::string> labels, bool allow_non_ergodic)
    : transition_(std::move(transition)), labels_(std::move(labels)) {
  validate_stochastic(transition_);
  if (!labels_.empty() && labels_.size() != num_states()) {
    throw Error(ErrorKind::DimensionMismatch, "label count differs from state count");
  }
  certificate_ = is_ergodic(transition_);
  if (!certificate_.ergodic && !allow_non_ergodic) {
    throw Error(ErrorKind::NonErgodic, certificate_.reason);
  }
  const auto n = num_states();
  cumulative_.resize(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = transition_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      acc += v;
      cumulative_[i * n + j] = acc;
      if (v > 0.0) last_positive = j;
    }
    for (std::size_t j = last_positive; j < n; ++j) cumulative_[i * n + j] = 1.0;
  }
}

ErgodicityCertificate is_ergodic(const Matrix& p) {
  ErgodicityCertificate cert;
  const auto n = static_cast<std::size_t>(p.rows());
  std::vector<long> forward;
  std::vector<long> backward;
  bfs_levels(p, false, forward);
  bfs_levels(p, true, backward);
  for (std::size_t v = 0; v < n; ++v) {
    if (forward[v] < 0 || backward[v] < 0) cert.violating_states.push_back(v);
  }
  if (!cert.violating_states.empty()) {
    cert.irreducible = false;
    std::ostringstream msg;
    msg << "reducible: states {";
    for (std::size_t k = 0; k < cert.violating_states.size(); ++k) {
      msg << (k ? "," : "") << cert.violating_states[k];
    }
    msg << "} are not in the communicating class of state 0";
    cert.reason = msg.str();
    return cert;
  }
  cert.irreducible = true;
  // Period = gcd of level[u] + 1 - level[v] over all edges u -> v.
  long g = 0;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (p(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) > 0.0) {
        g = std::gcd(g, std::abs(forward[u] + 1 - forward[v]));
      }
    }
  }
  cert.period = static_cast<std::size_t>(g);
  cert.ergodic = cert.period == 1;
  if (!cert.ergodic) cert.reason = "periodic with period " + std::to_string(cert.period);
  return cert;
}

StationaryDistribution stationary_distribution(const MarkovChain& chain) {
  const auto n = static_cast<Eigen::Index>(chain.num_states());
  Matrix system = chain.transition().transpose() - Matrix::Identity(n, n);
  system.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs(n - 1) = 1.0;
  Eigen::FullPivLU<Matrix> lu(system);
  if (lu.rank() < n) {
    throw Error(ErrorKind::SingularSystem, "stationary system is rank deficient (rank " +
                                               std::to_string(lu.rank()) + " < " +
                                               std::to_string(n) + ")");
  }
  Vector pi = lu.solve(rhs);
  pi = pi.cwiseMax(0.0);
  pi /= pi.sum();
  const double residual = (pi.transpose() * chain.transition() - pi.transpose()).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10)) {
    throw Error(ErrorKind::SingularSystem,
                "stationary residual " + format_double(residual) + " exceeds 1e-10");
  }
  return {std::move(pi)};
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw Error(ErrorKind::DimensionMismatch, "tv_distance: lengths " + std::to_string(p.size()) +
                                                  " and " + std::to_string(q.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

double tv_distance(const Vector& p, const Vector& q) {
  return tv_distance(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                     std::span<const double>(q.data(), static_cast<std::size_t>(q.size())));
}

MixingProfile mixing_time(const MarkovChain& chain, double alpha, std::size_t cap) {
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidArgument, "mixing_time: alpha must be > 0");
  const auto pi = stationary_distribution(chain).pi;
  const auto n = static_cast<Eigen::Index>(chain.num_states());
  MixingProfile profile;
  profile.alpha = alpha;
  Matrix power = Matrix::Identity(n, n);
  for (std::size_t k = 0;; ++k) {
    const double d = max_tv_to(power, pi);
    profile.d_curve.push_back(d);
    if (d <= alpha) {
      profile.tau = k;
      return profile;
    }
    if (k >= cap) {
      throw Error(ErrorKind::Timeout, "mixing time exceeds cap " + std::to_string(cap));
    }
    power = power * chain.transition();
  }
}

double estimate_geometric_constant(const MarkovChain& chain, std::span<const double> alpha_grid) {
  double c = 0.0;
  for (double alpha : alpha_grid) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw Error(ErrorKind::InvalidArgument, "alpha grid entries must lie in (0,1)");
    }
    const auto tau = mixing_time(chain, alpha).tau;
    c = std::max(c, static_cast<double>(tau) / std::log(1.0 / alpha));
  }
  return c;
}

std::size_t sample_step(const MarkovChain& chain, std::size_t state, RandomStream& rng) {
  return chain.sample_step(state, rng);
}

std::size_t sample_from(const Vector& distribution, RandomStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (Eigen::Index j = 0; j < distribution.size(); ++j) {
    if (distribution(j) > 0.0) last_positive = static_cast<std::size_t>(j);
  }
  for (std::size_t j = 0; j < last_positive; ++j) {
    acc += distribution(static_cast<Eigen::Index>(j));
    if (u < acc) return j;
  }
  return last_positive;
}

MixingTable::MixingTable(std::span<const MarkovChain> chains, std::size_t cap) {
  constexpr double kFloor = 1e-15;
  constexpr std::size_t kStallWindow = 200;
  for (const auto& chain : chains) {
    const auto pi = stationary_distribution(chain).pi;
    const auto n = static_cast<Eigen::Index>(chain.num_states());
    Matrix power = Matrix::Identity(n, n);
    std::vector<double> curve;
    double best = 2.0;
    std::size_t best_at = 0;
    for (std::size_t k = 0; k <= cap; ++k) {
      const double d = max_tv_to(power, pi);
      curve.push_back(d);
      if (d < best) {
        best = d;
        best_at = k;
      }
      // Stop at the floor or once roundoff stalls further progress.
      if (d <= kFloor || k - best_at > kStallWindow) break;
      power = power * chain.transition();
    }
    for (std::size_t k = curve.size(); k-- > 1;) curve[k - 1] = std::max(curve[k - 1], curve[k]);
    curves_.push_back(std::move(curve));
  }
}

std::size_t MixingTable::tau(double alpha) const {
  if (!(alpha > 0.0)) throw Error(ErrorKind::InvalidArgument, "tau: alpha must be > 0");
  std::size_t worst = 0;
  for (const auto& curve : curves_) {
    // Suffix maxima are non-increasing, so the first index at or below alpha is the answer.
    auto it = std::partition_point(curve.begin(), curve.end(), [alpha](double d) { return d > alpha; });
    if (it == curve.end()) {
      throw Error(ErrorKind::Timeout, "mixing curve never reaches alpha = " + format_double(alpha));
    }
    worst = std::max(worst, static_cast<std::size_t>(it - curve.begin()));
  }
  return worst;
}

MarkovChain random_ergodic_chain(std::size_t n, double smoothing, RandomStream& rng) {
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "chain needs at least one state");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "smoothing must lie in [0,1)");
  }
  const auto m = static_cast<Eigen::Index>(n);
  Matrix p(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      p(i, j) = rng.exponential();
      total += p(i, j);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      p(i, j) = (1.0 - smoothing) * p(i, j) / total + smoothing / static_cast<double>(n);
    }
    // Put the rounding residue on the largest entry so the row sums to 1.
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    p(i, arg) += 1.0 - p.row(i).sum();
  }
  return MarkovChain(std::move(p));
}

MarkovChain two_step_mixing_chain(std::size_t n, RandomStream& rng) {
  if (n < 3) throw Error(ErrorKind::InvalidArgument, "two-step mixing chain needs n >= 3");
  const auto m = static_cast<Eigen::Index>(n);
  Vector pi(m);
  for (Eigen::Index i = 0; i < m; ++i) pi(i) = rng.exponential();
  pi = 0.5 * pi / pi.sum() + Vector::Constant(m, 0.5 / static_cast<double>(n));
  pi /= pi.sum();

  Vector u(m);
  Vector w(m);
  for (Eigen::Index i = 0; i < m; ++i) u(i) = rng.normal();
  for (Eigen::Index i = 0; i < m; ++i) w(i) = rng.normal();
  u -= Vector::Ones(m) * pi.dot(u);
  const Vector ones = Vector::Ones(m) / std::sqrt(static_cast<double>(n));
  w -= ones * ones.dot(w);
  Vector u_perp = u - ones * ones.dot(u);
  w -= u_perp * (u_perp.dot(w) / u_perp.squaredNorm());

  double scale = std::numeric_limits<double>::infinity();
  for (Eigen::Index x = 0; x < m; ++x) {
    for (Eigen::Index y = 0; y < m; ++y) {
      const double uw = u(x) * w(y);
      if (uw < 0.0) scale = std::min(scale, pi(y) / -uw);
    }
  }
  scale *= 0.75;
  Matrix p = Vector::Ones(m) * pi.transpose() + scale * u * w.transpose();
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    p(i, arg) += 1.0 - p.row(i).sum();
  }
  return MarkovChain(std::move(p));
}

MarkovChain read_chain(std::istream& in, bool allow_non_ergodic) {
  long long n = 0;
  if (!(in >> n) || n <= 0) throw Error(ErrorKind::Io, "chain file: missing or invalid state count");
  Matrix p(n, n);
  for (long long i = 0; i < n; ++i) {
    for (long long j = 0; j < n; ++j) {
      if (!(in >> p(i, j))) {
        throw Error(ErrorKind::Io, "chain file: expected " + std::to_string(n * n) + " probabilities");
      }
    }
  }
  return MarkovChain(std::move(p), {}, allow_non_ergodic);
}

MarkovChain read_chain_file(const std::string& path, bool allow_non_ergodic) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open chain file '" + path + "'");
  return read_chain(in, allow_non_ergodic);
}

void write_chain(std::ostream& out, const MarkovChain& chain) {
  const auto n = static_cast<Eigen::Index>(chain.num_states());
  out << n << '\n';
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      out << (j ? " " : "") << format_double(chain.transition()(i, j));
    }
    out << '\n';
  }
}

}  // namespace localsa
