#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "localsa/operators.hpp"

namespace localsa {

/// Constant alpha, or harmonic alpha_idx = alpha0 / (idx + 1).
struct StepSchedule {
  enum class Kind { Constant, Harmonic };

  Kind kind = Kind::Constant;
  double alpha = 0.0;  // alpha for Constant, alpha0 for Harmonic

  static StepSchedule constant(double alpha);
  static StepSchedule harmonic(double alpha0);

  double at(std::size_t idx) const noexcept {
    return kind == Kind::Constant ? alpha : alpha / (static_cast<double>(idx) + 1.0);
  }
};

/// fresh: local step t of round k uses sample and step index kH + t.
/// paper-literal: index k + t, so consecutive rounds share H - 1 samples.
enum class SampleIndexing { Fresh, PaperLiteral };

enum class InitialState { Stationary, Fixed };

std::string to_string(SampleIndexing indexing);
SampleIndexing parse_sample_indexing(const std::string& text);

inline std::size_t step_index(std::size_t k, std::size_t t, std::size_t H, SampleIndexing indexing) {
  return indexing == SampleIndexing::Fresh ? k * H + t : k + t;
}

/// Step size at the first local step of round k; every local step of the
/// round is at most this value because schedules are non-increasing.
inline double round_step(const StepSchedule& schedule, std::size_t k, std::size_t H,
                         SampleIndexing indexing) {
  return schedule.at(step_index(k, 0, H, indexing));
}

struct AlgorithmConfig {
  std::size_t H = 1;
  std::size_t rounds = 1;
  StepSchedule schedule = StepSchedule::constant(0.01);
  SampleIndexing indexing = SampleIndexing::Fresh;
  bool record_locals = false;  // also records visited states and steps
  Vector theta0;               // empty means the zero vector
  InitialState initial_state = InitialState::Stationary;
  std::vector<std::size_t> fixed_states;  // per agent, for InitialState::Fixed (default 0)
};

struct Trajectory {
  std::size_t N = 0;
  std::size_t H = 0;
  std::size_t rounds = 0;
  std::size_t dim = 0;
  std::vector<Vector> bar_theta;       // rounds + 1 entries
  std::vector<Vector> locals;          // (k, i, t), t in [0, H]
  std::vector<std::uint32_t> samples;  // (k, i, t), t in [0, H)
  std::vector<double> alphas;          // (k, t), t in [0, H)

  bool has_locals() const noexcept { return !locals.empty(); }
  const Vector& local(std::size_t k, std::size_t i, std::size_t t) const {
    return locals[(k * N + i) * (H + 1) + t];
  }
  std::size_t sample(std::size_t k, std::size_t i, std::size_t t) const {
    return samples[(k * N + i) * H + t];
  }
  double alpha(std::size_t k, std::size_t t) const { return alphas[k * H + t]; }
};

/// Streaming form of the algorithm, one round per `step` call. Owns its
/// random streams; the federation must outlive it.
class LocalSAEngine {
 public:
  LocalSAEngine(const Federation& federation, const AlgorithmConfig& config, std::uint64_t seed);

  std::size_t round() const noexcept { return round_; }
  const Vector& bar_theta() const noexcept { return bar_; }

  /// Advances one round. When `record` is non-null and locals are enabled,
  /// appends the round's locals, samples and steps. Throws Diverged on a
  /// non-finite average.
  void step(Trajectory* record = nullptr);

 private:
  std::size_t next_state(std::size_t agent);

  const Federation& fed_;
  AlgorithmConfig config_;
  std::size_t round_ = 0;
  std::size_t dim_ = 0;
  Vector bar_;
  std::vector<RandomStream> streams_;
  std::vector<std::size_t> state_;                // fresh: current chain state per agent
  std::vector<std::vector<std::size_t>> window_;  // paper-literal: X^k .. X^{k+H-1}
  std::vector<double> local_;                     // N * dim
  std::vector<double> scratch_;
  std::vector<double> step_alpha_;
  // Fixed-dimension update for linear federations, null otherwise.
  void (*linear_kernel_)(const double* a, const double* b, double alpha, double* theta) = nullptr;
};

Trajectory run_local_sa(const Federation& federation, const AlgorithmConfig& config,
                        std::uint64_t seed);

// Admissibility ----------------------------------------------------------

using TauFn = std::function<std::size_t(double)>;

/// min{log 2/(2BH), mu/(8N(19B^2H + 9 + 57LBH)), N/(2H mu)}.
double constant_step_rhs(const OperatorConstants& c, std::size_t N, std::size_t H);
/// Same first two terms, with 2 alpha0 as the third.
double timevarying_step_rhs(const OperatorConstants& c, std::size_t N, std::size_t H, double alpha0);

inline constexpr std::size_t kStepGridPoints = 200;
inline constexpr double kStepGridMin = 1e-8;
inline constexpr double kStepGridMax = 1.0;

/// Largest alpha with alpha tau(alpha) <= constant_step_rhs and 2BH alpha <= log 2.
/// Scans the log grid, then bisects between the last passing and the next
/// grid point; every returned value is checked individually.
double max_constant_step(const OperatorConstants& c, std::size_t N, std::size_t H,
                         const TauFn& tau_fn);

inline constexpr std::size_t kKStarCap = 10'000'000;
inline constexpr double kKStarHorizonFactor = 10.0;

/// Smallest k with k >= tau(a_k) and sum_{t=k-tau}^{k} a_t <= rhs that keeps
/// holding for every k' in (k, k + horizon_factor * k]. `round_alpha(k)` is
/// the round-level step.
std::size_t find_K_star(const std::function<double(std::size_t)>& round_alpha, double rhs,
                        const TauFn& tau_fn, double horizon_factor = kKStarHorizonFactor,
                        std::size_t cap = kKStarCap);

/// Round-level step a_k = schedule.at(k).
std::size_t find_K_star(const StepSchedule& schedule, double rhs, const TauFn& tau_fn,
                        double horizon_factor = kKStarHorizonFactor, std::size_t cap = kKStarCap);

/// Uses timevarying_step_rhs and the round-level step of `indexing`.
std::size_t find_K_star(const StepSchedule& schedule, const OperatorConstants& c, std::size_t N,
                        std::size_t H, const TauFn& tau_fn, SampleIndexing indexing,
                        double horizon_factor = kKStarHorizonFactor, std::size_t cap = kKStarCap);

/// sum_{t=k-tau}^{k} schedule.at(t).
double alpha_window_sum(const StepSchedule& schedule, std::size_t k, std::size_t tau);

/// Same sum for an arbitrary round-level step function.
double alpha_window_sum(const std::function<double(std::size_t)>& round_alpha, std::size_t k,
                        std::size_t tau);

// Binary round log ------------------------------------------------------

void write_trajectory(std::ostream& out, const Trajectory& trajectory);
Trajectory read_trajectory(std::istream& in);

}  // namespace localsa
