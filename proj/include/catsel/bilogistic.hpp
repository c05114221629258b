#pragma once

// Standard logistic distribution and the Ali-Mikhail-Haq bivariate logistic
// CDF with logistic marginals:
//
//   Lambda2(u, v, w) = 1 / (1 + e^-u + e^-v + (1 - w) e^(-u-v)),  w in [-1, 1].

#include <cmath>

namespace catsel {

/// A probability strictly inside (0, 1).
class Probability {
 public:
  /// Throws DomainError unless 0 < p < 1.
  explicit Probability(double p);
  double value() const noexcept { return value_; }
  /// Clamps into the open interval instead of rejecting.
  static Probability saturating(double p) noexcept;
  friend bool operator==(Probability, Probability) = default;

 private:
  struct Unchecked {};
  Probability(double p, Unchecked) noexcept : value_(p) {}
  double value_;
};

/// A finite real log-odds value.
class LogOdds {
 public:
  /// Throws DomainError on NaN or infinity.
  explicit LogOdds(double u);
  double value() const noexcept { return value_; }
  friend bool operator==(LogOdds, LogOdds) = default;

 private:
  double value_;
};

/// An association parameter in the closed interval [-1, 1].
class Association {
 public:
  /// Throws DomainError outside [-1, 1].
  explicit Association(double w);
  double value() const noexcept { return value_; }
  friend bool operator==(Association, Association) = default;

 private:
  double value_;
};

Probability logistic_cdf(LogOdds u);

/// Throws DomainError if p is not strictly inside (0, 1).
LogOdds logistic_quantile(Probability p);
LogOdds logistic_quantile(double p);

Probability amh_joint(LogOdds u, LogOdds v, Association w);

struct AmhPartials {
  double d_du;
  double d_dv;
  double d_dw;
};

AmhPartials amh_partials(LogOdds u, LogOdds v, Association w);

struct AttainableInterval {
  Probability lo;
  Probability hi;
  bool contains(double p) const noexcept { return lo.value() <= p && p <= hi.value(); }
};

/// Range of Lambda2(u, v, .) as the association sweeps [-1, 1].
AttainableInterval attainable_interval(LogOdds u, LogOdds v);

// Unchecked kernels on raw doubles for the likelihood inner loops. Callers
// guarantee finite u, v and w in [-1, 1].
namespace kernel {

inline double logistic(double u) noexcept {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// log(Lambda(u)) without forming Lambda(u).
inline double log_logistic(double u) noexcept {
  return u >= 0.0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

/// Lambda2 together with the partials of log Lambda2.
struct AmhEval {
  double value;
  double log_value;
  double dlog_du;
  double dlog_dv;
  double dlog_dw;
};

inline constexpr double kFactoredThreshold = -37.0;

inline AmhEval amh_eval(double u, double v, double w) noexcept {
  if (u >= kFactoredThreshold && v >= kFactoredThreshold) {
    const double eu = std::exp(-u);
    const double ev = std::exp(-v);
    const double euv = eu * ev;
    const double c = (1.0 - w) * euv;
    const double den = 1.0 + eu + ev + c;
    return {1.0 / den, -std::log(den), (eu + c) / den, (ev + c) / den, euv / den};
  }
  // Factored form: every term of the denominator is shifted by its largest
  // exponent before exponentiation, so e^(-u-v) never overflows.
  const double t1 = -u;
  const double t2 = -v;
  const double t3 = -u - v;
  const bool has_c = w < 1.0;
  const double tc = has_c ? std::log1p(-w) + t3 : -INFINITY;
  double m = 0.0;
  m = std::fmax(m, t1);
  m = std::fmax(m, t2);
  m = std::fmax(m, tc);
  const double s = std::exp(-m) + std::exp(t1 - m) + std::exp(t2 - m) +
                   (has_c ? std::exp(tc - m) : 0.0);
  const double log_den = m + std::log(s);
  const double r1 = std::exp(t1 - log_den);
  const double r2 = std::exp(t2 - log_den);
  const double rc = has_c ? std::exp(tc - log_den) : 0.0;
  return {std::exp(-log_den), -log_den, r1 + rc, r2 + rc, std::exp(t3 - log_den)};
}

inline double amh(double u, double v, double w) noexcept { return amh_eval(u, v, w).value; }

}  // namespace kernel
}  // namespace catsel
