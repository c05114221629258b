#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace catsel {

enum class ErrorCode {
  // malformed or out-of-domain inputs
  DomainError,
  InvalidInput,
  InvalidConfig,
  InsufficientInstruments,
  // method errors
  FrechetViolation,
  OutsideAttainableRange,
  DegenerateTable,
  RelevanceViolation,
  NonIdentified,
  SimplexViolation,
  InteriorityViolation,
  InfeasibleDGP,
  RankDeficient,
  SeparationDetected,
  NonFiniteLik,
  NoConvergence,
  SingularInformation,
  NotPositiveDefinite,
  NoBracket,
  TooManyFailures,
};

std::string_view error_name(ErrorCode code) noexcept;

/// True for errors caused by the caller's input rather than by the method.
bool is_input_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<int> category = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

  /// Offending outcome category (1-based), when the error is category specific.
  std::optional<int> category() const noexcept { return category_; }

  /// Copy of this error tagged with category `k`.
  Error with_category(int k) const;

 private:
  ErrorCode code_;
  std::optional<int> category_;
};

class OutsideAttainableRange : public Error {
 public:
  OutsideAttainableRange(double target, double lo, double hi);
  double target;
  double lo;
  double hi;
};

class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(std::size_t pivot);
  std::size_t pivot;
};

class NonFiniteLik : public Error {
 public:
  explicit NonFiniteLik(std::size_t row);
  std::size_t row;
};

class NoConvergence : public Error {
 public:
  NoConvergence(const std::string& message, std::vector<double> best_iterate,
                double gradient_norm, int iterations);
  std::vector<double> best_iterate;
  double gradient_norm;
  int iterations;
};

}  // namespace catsel
