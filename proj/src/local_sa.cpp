#include "localsa/local_sa.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "localsa/error.hpp"
#include "localsa/text.hpp"

namespace localsa {

StepSchedule StepSchedule::constant(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorKind::InvalidArgument, "constant step must be positive and finite");
  }
  return {Kind::Constant, alpha};
}

StepSchedule StepSchedule::harmonic(double alpha0) {
  if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) {
    throw Error(ErrorKind::InvalidArgument, "harmonic alpha0 must be positive and finite");
  }
  return {Kind::Harmonic, alpha0};
}

std::string to_string(SampleIndexing indexing) {
  return indexing == SampleIndexing::Fresh ? "fresh" : "paper-literal";
}

SampleIndexing parse_sample_indexing(const std::string& text) {
  if (text == "fresh") return SampleIndexing::Fresh;
  if (text == "paper-literal") return SampleIndexing::PaperLiteral;
  throw Error(ErrorKind::Config, "sample_indexing must be 'fresh' or 'paper-literal', got '" + text + "'");
}

// Engine -----------------------------------------------------------------

namespace {

// Same arithmetic, in the same order, as OperatorSpec::eval_into followed by
// theta -= alpha * out, with the dimension known at compile time.
template <std::size_t D>
void linear_update(const double* a, const double* b, double alpha, double* theta) {
  double out[D];
  for (std::size_t r = 0; r < D; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < D; ++c) acc += a[r * D + c] * theta[c];
    out[r] = -acc;
  }
  for (std::size_t j = 0; j < D; ++j) theta[j] -= alpha * out[j];
}

using LinearKernel = void (*)(const double*, const double*, double, double*);

LinearKernel pick_linear_kernel(std::size_t dim) {
  switch (dim) {
    case 1: return &linear_update<1>;
    case 2: return &linear_update<2>;
    case 3: return &linear_update<3>;
    case 4: return &linear_update<4>;
    case 5: return &linear_update<5>;
    case 6: return &linear_update<6>;
    case 7: return &linear_update<7>;
    case 8: return &linear_update<8>;
    default: return nullptr;
  }
}

}  // namespace

LocalSAEngine::LocalSAEngine(const Federation& federation, const AlgorithmConfig& config,
                             std::uint64_t seed)
    : fed_(federation), config_(config), dim_(federation.dim()) {
  const auto n = fed_.N();
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "federation has no agents");
  if (config_.H == 0) throw Error(ErrorKind::InvalidArgument, "H must be >= 1");
  if (config_.theta0.size() == 0) {
    bar_ = Vector::Zero(static_cast<Eigen::Index>(dim_));
  } else if (static_cast<std::size_t>(config_.theta0.size()) != dim_) {
    throw Error(ErrorKind::DimensionMismatch, "theta0 length differs from federation dimension");
  } else {
    bar_ = config_.theta0;
  }
  if (config_.initial_state == InitialState::Fixed && !config_.fixed_states.empty() &&
      config_.fixed_states.size() != n) {
    throw Error(ErrorKind::DimensionMismatch, "fixed_states needs one entry per agent");
  }

  streams_.reserve(n);
  state_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    streams_.emplace_back(derive_seed(seed, i));
    std::size_t x0 = 0;
    if (config_.initial_state == InitialState::Stationary) {
      x0 = sample_from(fed_.pis[i], streams_[i]);
    } else if (!config_.fixed_states.empty()) {
      x0 = config_.fixed_states[i];
    }
    if (x0 >= fed_.chains[i].num_states()) {
      throw Error(ErrorKind::InvalidArgument, "initial state out of range for agent " + std::to_string(i));
    }
    state_[i] = x0;
  }
  if (config_.indexing == SampleIndexing::PaperLiteral) {
    window_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      window_[i].push_back(state_[i]);
      while (window_[i].size() < config_.H) window_[i].push_back(next_state(i));
    }
  }
  local_.assign(n * dim_, 0.0);
  scratch_.assign(dim_, 0.0);
  step_alpha_.assign(config_.H, 0.0);
  const bool all_linear =
      std::all_of(fed_.ops.begin(), fed_.ops.end(), [](const OperatorSpec& op) { return op.is_linear(); });
  if (all_linear) linear_kernel_ = pick_linear_kernel(dim_);
}

std::size_t LocalSAEngine::next_state(std::size_t agent) {
  if (config_.indexing == SampleIndexing::PaperLiteral) {
    const std::size_t last = window_[agent].empty() ? state_[agent] : window_[agent].back();
    return fed_.chains[agent].sample_step(last, streams_[agent]);
  }
  state_[agent] = fed_.chains[agent].sample_step(state_[agent], streams_[agent]);
  return state_[agent];
}

void LocalSAEngine::step(Trajectory* record) {
  const auto n = fed_.N();
  const auto H = config_.H;
  const auto k = round_;
  const bool literal = config_.indexing == SampleIndexing::PaperLiteral;
  const bool keep = record != nullptr && config_.record_locals;

  if (literal && k > 0) {
    // Slide the window from X^{k-1}.. to X^k..X^{k+H-1}.
    for (std::size_t i = 0; i < n; ++i) {
      auto& w = window_[i];
      const std::size_t next = fed_.chains[i].sample_step(w.back(), streams_[i]);
      w.erase(w.begin());
      w.push_back(next);
    }
  }
  for (std::size_t t = 0; t < H; ++t) {
    step_alpha_[t] = config_.schedule.at(step_index(k, t, H, config_.indexing));
  }
  if (keep) {
    for (std::size_t t = 0; t < H; ++t) record->alphas.push_back(step_alpha_[t]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    double* theta = local_.data() + i * dim_;
    std::copy(bar_.data(), bar_.data() + dim_, theta);
    const auto& op = fed_.ops[i];
    if (keep) record->locals.push_back(bar_);
    for (std::size_t t = 0; t < H; ++t) {
      std::size_t x;
      if (literal) {
        x = window_[i][t];
      } else {
        x = state_[i];
        state_[i] = fed_.chains[i].sample_step(x, streams_[i]);
      }
      const double a = step_alpha_[t];
      if (linear_kernel_) {
        linear_kernel_(op.flat_a(x), op.flat_b(x), a, theta);
      } else {
        op.eval_into(theta, x, scratch_.data());
        for (std::size_t j = 0; j < dim_; ++j) theta[j] -= a * scratch_[j];
      }
      if (keep) {
        record->samples.push_back(static_cast<std::uint32_t>(x));
        record->locals.push_back(Vector(Eigen::Map<const Vector>(theta, static_cast<Eigen::Index>(dim_))));
      }
    }
  }

  // Average in fixed agent order, then divide.
  for (std::size_t j = 0; j < dim_; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += local_[i * dim_ + j];
    bar_(static_cast<Eigen::Index>(j)) = acc / static_cast<double>(n);
  }
  ++round_;
  if (!bar_.allFinite()) {
    throw Error(ErrorKind::Diverged, "non-finite average after round " + std::to_string(k));
  }
}

Trajectory run_local_sa(const Federation& federation, const AlgorithmConfig& config,
                        std::uint64_t seed) {
  if (config.rounds == 0) throw Error(ErrorKind::InvalidArgument, "rounds must be >= 1");
  LocalSAEngine engine(federation, config, seed);
  Trajectory traj;
  traj.N = federation.N();
  traj.H = config.H;
  traj.rounds = config.rounds;
  traj.dim = federation.dim();
  traj.bar_theta.reserve(config.rounds + 1);
  traj.bar_theta.push_back(engine.bar_theta());
  if (config.record_locals) {
    traj.locals.reserve(config.rounds * traj.N * (traj.H + 1));
    traj.samples.reserve(config.rounds * traj.N * traj.H);
    traj.alphas.reserve(config.rounds * traj.H);
  }
  for (std::size_t k = 0; k < config.rounds; ++k) {
    engine.step(&traj);
    traj.bar_theta.push_back(engine.bar_theta());
  }
  return traj;
}

// Admissibility ----------------------------------------------------------

namespace {

double common_rhs(const OperatorConstants& c, std::size_t N, std::size_t H) {
  const double n = static_cast<double>(N);
  const double h = static_cast<double>(H);
  const double growth = c.B > 0.0 ? std::log(2.0) / (2.0 * c.B * h) : std::numeric_limits<double>::infinity();
  const double mono = c.mu / (8.0 * n * (19.0 * c.B * c.B * h + 9.0 + 57.0 * c.L * c.B * h));
  return std::min(growth, mono);
}

bool constant_step_ok(double alpha, double rhs, double growth_cap, const TauFn& tau_fn) {
  if (alpha > growth_cap) return false;
  std::size_t tau = 0;
  try {
    tau = tau_fn(alpha);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Timeout) return false;
    throw;
  }
  return alpha * static_cast<double>(tau) <= rhs;
}

}  // namespace

double constant_step_rhs(const OperatorConstants& c, std::size_t N, std::size_t H) {
  return std::min(common_rhs(c, N, H),
                  static_cast<double>(N) / (2.0 * static_cast<double>(H) * c.mu));
}

double timevarying_step_rhs(const OperatorConstants& c, std::size_t N, std::size_t H, double alpha0) {
  return std::min(common_rhs(c, N, H), 2.0 * alpha0);
}

double max_constant_step(const OperatorConstants& c, std::size_t N, std::size_t H,
                         const TauFn& tau_fn) {
  if (N == 0 || H == 0) throw Error(ErrorKind::InvalidArgument, "N and H must be >= 1");
  if (!(c.mu > 0.0)) throw Error(ErrorKind::InvalidArgument, "mu must be positive");
  const double rhs = constant_step_rhs(c, N, H);
  const double growth_cap =
      c.B > 0.0 ? std::log(2.0) / (2.0 * c.B * static_cast<double>(H)) : std::numeric_limits<double>::infinity();

  const double lmin = std::log10(kStepGridMin);
  const double lmax = std::log10(kStepGridMax);
  auto grid = [&](std::size_t j) {
    if (j + 1 == kStepGridPoints) return kStepGridMax;
    return std::pow(10.0, lmin + (lmax - lmin) * static_cast<double>(j) /
                                     static_cast<double>(kStepGridPoints - 1));
  };
  std::size_t best = kStepGridPoints;
  for (std::size_t j = kStepGridPoints; j-- > 0;) {
    if (constant_step_ok(grid(j), rhs, growth_cap, tau_fn)) {
      best = j;
      break;
    }
  }
  if (best == kStepGridPoints) {
    throw Error(ErrorKind::NoAdmissibleStep,
                "no grid step >= " + format_double(kStepGridMin) + " satisfies the admissibility bound");
  }
  double lo = grid(best);
  if (best + 1 == kStepGridPoints) return lo;
  double hi = grid(best + 1);
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    if (constant_step_ok(mid, rhs, growth_cap, tau_fn)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double alpha_window_sum(const std::function<double(std::size_t)>& round_alpha, std::size_t k,
                        std::size_t tau) {
  if (k < tau) {
    throw Error(ErrorKind::WindowUnderflow,
                "window k - tau is negative (k = " + std::to_string(k) + ", tau = " + std::to_string(tau) + ")");
  }
  double sum = 0.0;
  for (std::size_t t = k - tau; t <= k; ++t) sum += round_alpha(t);
  return sum;
}

double alpha_window_sum(const StepSchedule& schedule, std::size_t k, std::size_t tau) {
  return alpha_window_sum([&](std::size_t t) { return schedule.at(t); }, k, tau);
}

std::size_t find_K_star(const std::function<double(std::size_t)>& round_alpha, double rhs,
                        const TauFn& tau_fn, double horizon_factor, std::size_t cap) {
  bool have_candidate = false;
  std::size_t candidate = 0;
  for (std::size_t k = 0; k <= cap; ++k) {
    const std::size_t tau = tau_fn(round_alpha(k));
    const bool ok = k >= tau && alpha_window_sum(round_alpha, k, tau) <= rhs;
    if (!ok) {
      have_candidate = false;
      continue;
    }
    if (!have_candidate) {
      have_candidate = true;
      candidate = k;
    }
    if (static_cast<double>(k) >= static_cast<double>(candidate) * (1.0 + horizon_factor)) {
      return candidate;
    }
  }
  throw Error(ErrorKind::NotFoundWithinCap, "K* not found within " + std::to_string(cap) + " rounds");
}

std::size_t find_K_star(const StepSchedule& schedule, double rhs, const TauFn& tau_fn,
                        double horizon_factor, std::size_t cap) {
  return find_K_star([&](std::size_t k) { return schedule.at(k); }, rhs, tau_fn, horizon_factor, cap);
}

std::size_t find_K_star(const StepSchedule& schedule, const OperatorConstants& c, std::size_t N,
                        std::size_t H, const TauFn& tau_fn, SampleIndexing indexing,
                        double horizon_factor, std::size_t cap) {
  const double rhs = timevarying_step_rhs(c, N, H, schedule.alpha);
  return find_K_star([&](std::size_t k) { return round_step(schedule, k, H, indexing); }, rhs,
                     tau_fn, horizon_factor, cap);
}

// Binary round log ------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'S', 'A', 'T', 'R', 'A', 'J', '1'};

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorKind::Io, "round log truncated");
  }
  return value;
}

void put_vector(std::ostream& out, const Vector& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vector get_vector(std::istream& in, std::size_t dim) {
  Vector v(static_cast<Eigen::Index>(dim));
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(dim * sizeof(double)))) {
    throw Error(ErrorKind::Io, "round log truncated");
  }
  return v;
}

}  // namespace

void write_trajectory(std::ostream& out, const Trajectory& traj) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(out, traj.N);
  put<std::uint64_t>(out, traj.H);
  put<std::uint64_t>(out, traj.rounds);
  put<std::uint64_t>(out, traj.dim);
  put<std::uint8_t>(out, traj.has_locals() ? 1 : 0);
  for (const auto& v : traj.bar_theta) put_vector(out, v);
  if (traj.has_locals()) {
    for (const auto& v : traj.locals) put_vector(out, v);
    for (auto s : traj.samples) put<std::uint32_t>(out, s);
    for (double a : traj.alphas) put<double>(out, a);
  }
  if (!out) throw Error(ErrorKind::Io, "failed writing round log");
}

Trajectory read_trajectory(std::istream& in) {
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw Error(ErrorKind::Io, "not a round log (bad magic)");
  }
  Trajectory traj;
  traj.N = get<std::uint64_t>(in);
  traj.H = get<std::uint64_t>(in);
  traj.rounds = get<std::uint64_t>(in);
  traj.dim = get<std::uint64_t>(in);
  const bool locals = get<std::uint8_t>(in) != 0;
  constexpr std::uint64_t kSanity = 1ULL << 32;
  if (traj.N == 0 || traj.H == 0 || traj.dim == 0 || traj.N > kSanity || traj.H > kSanity ||
      traj.rounds > kSanity || traj.dim > kSanity) {
    throw Error(ErrorKind::Io, "round log header is corrupt");
  }
  for (std::size_t k = 0; k <= traj.rounds; ++k) traj.bar_theta.push_back(get_vector(in, traj.dim));
  if (locals) {
    const auto n_locals = traj.rounds * traj.N * (traj.H + 1);
    for (std::size_t j = 0; j < n_locals; ++j) traj.locals.push_back(get_vector(in, traj.dim));
    const auto n_samples = traj.rounds * traj.N * traj.H;
    for (std::size_t j = 0; j < n_samples; ++j) traj.samples.push_back(get<std::uint32_t>(in));
    for (std::size_t j = 0; j < traj.rounds * traj.H; ++j) traj.alphas.push_back(get<double>(in));
  }
  return traj;
}

}  // namespace localsa
