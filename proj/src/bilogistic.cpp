#include "catsel/bilogistic.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "catsel/errors.hpp"

namespace catsel {

Probability::Probability(double p) : value_(p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw Error(ErrorCode::DomainError,
                "probability must lie strictly inside (0, 1), got " + std::to_string(p));
  }
}

Probability Probability::saturating(double p) noexcept {
  constexpr double kLo = std::numeric_limits<double>::denorm_min();
  const double kHi = std::nextafter(1.0, 0.0);
  if (std::isnan(p)) p = 0.5;
  return Probability(p < kLo ? kLo : (p > kHi ? kHi : p), Unchecked{});
}

LogOdds::LogOdds(double u) : value_(u) {
  if (!std::isfinite(u)) throw Error(ErrorCode::DomainError, "log-odds must be finite");
}

Association::Association(double w) : value_(w) {
  if (!(w >= -1.0 && w <= 1.0)) {
    throw Error(ErrorCode::DomainError,
                "association must lie in [-1, 1], got " + std::to_string(w));
  }
}

Probability logistic_cdf(LogOdds u) {
  return Probability::saturating(kernel::logistic(u.value()));
}

LogOdds logistic_quantile(Probability p) { return LogOdds(kernel::logit(p.value())); }

LogOdds logistic_quantile(double p) { return logistic_quantile(Probability(p)); }

Probability amh_joint(LogOdds u, LogOdds v, Association w) {
  return Probability::saturating(kernel::amh(u.value(), v.value(), w.value()));
}

AmhPartials amh_partials(LogOdds u, LogOdds v, Association w) {
  const auto e = kernel::amh_eval(u.value(), v.value(), w.value());
  return {e.value * e.dlog_du, e.value * e.dlog_dv, e.value * e.dlog_dw};
}

AttainableInterval attainable_interval(LogOdds u, LogOdds v) {
  return {amh_joint(u, v, Association(-1.0)), amh_joint(u, v, Association(1.0))};
}

}  // namespace catsel
