#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace localsa {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  SingularSystem,
  NonErgodic,
  Timeout,
  NoAdmissibleStep,
  NotFoundWithinCap,
  WindowUnderflow,
  InadmissibleStep,
  Diverged,
  GenerationFailed,
  AssumptionFailed,
  NoConvergence,
  NonPositiveMSE,
  Io,
  Config,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` distinguishes failure modes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::NonErgodic: return "NonErgodic";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::NoAdmissibleStep: return "NoAdmissibleStep";
    case ErrorKind::NotFoundWithinCap: return "NotFoundWithinCap";
    case ErrorKind::WindowUnderflow: return "WindowUnderflow";
    case ErrorKind::InadmissibleStep: return "InadmissibleStep";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::GenerationFailed: return "GenerationFailed";
    case ErrorKind::AssumptionFailed: return "AssumptionFailed";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::NonPositiveMSE: return "NonPositiveMSE";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Config: return "Config";
  }
  return "Unknown";
}

}  // namespace localsa
