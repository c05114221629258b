#include "catsel/errors.hpp"

#include <cstdio>
#include <utility>

namespace catsel {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InsufficientInstruments: return "InsufficientInstruments";
    case ErrorCode::FrechetViolation: return "FrechetViolation";
    case ErrorCode::OutsideAttainableRange: return "OutsideAttainableRange";
    case ErrorCode::DegenerateTable: return "DegenerateTable";
    case ErrorCode::RelevanceViolation: return "RelevanceViolation";
    case ErrorCode::NonIdentified: return "NonIdentified";
    case ErrorCode::SimplexViolation: return "SimplexViolation";
    case ErrorCode::InteriorityViolation: return "InteriorityViolation";
    case ErrorCode::InfeasibleDGP: return "InfeasibleDGP";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::SeparationDetected: return "SeparationDetected";
    case ErrorCode::NonFiniteLik: return "NonFiniteLik";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NoBracket: return "NoBracket";
    case ErrorCode::TooManyFailures: return "TooManyFailures";
  }
  return "Unknown";
}

bool is_input_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DomainError:
    case ErrorCode::InvalidInput:
    case ErrorCode::InvalidConfig:
    case ErrorCode::InsufficientInstruments:
      return true;
    default:
      return false;
  }
}

Error::Error(ErrorCode code, const std::string& message, std::optional<int> category)
    : std::runtime_error(message), code_(code), category_(category) {}

Error Error::with_category(int k) const {
  return Error(code_, what(), k);
}

namespace {
std::string format_range(double target, double lo, double hi) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "joint probability %.17g outside attainable interval [%.17g, %.17g]",
                target, lo, hi);
  return buf;
}
}  // namespace

OutsideAttainableRange::OutsideAttainableRange(double target_, double lo_, double hi_)
    : Error(ErrorCode::OutsideAttainableRange, format_range(target_, lo_, hi_)),
      target(target_), lo(lo_), hi(hi_) {}

NotPositiveDefinite::NotPositiveDefinite(std::size_t pivot_)
    : Error(ErrorCode::NotPositiveDefinite,
            "matrix not positive definite at pivot " + std::to_string(pivot_)),
      pivot(pivot_) {}

NonFiniteLik::NonFiniteLik(std::size_t row_)
    : Error(ErrorCode::NonFiniteLik,
            "non-finite log-likelihood contribution at row " + std::to_string(row_)),
      row(row_) {}

NoConvergence::NoConvergence(const std::string& message, std::vector<double> best,
                             double gnorm, int iters)
    : Error(ErrorCode::NoConvergence, message),
      best_iterate(std::move(best)), gradient_norm(gnorm), iterations(iters) {}

}  // namespace catsel
