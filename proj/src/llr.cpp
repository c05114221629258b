#include "catsel/llr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "catsel/errors.hpp"

namespace catsel {

EventTriple::EventTriple(Probability p_a, Probability p_b, double p_joint)
    : p_a_(p_a), p_b_(p_b), p_joint_(p_joint) {
  const double a = p_a.value();
  const double b = p_b.value();
  const double upper = std::min(a, b);
  const double lower = std::max(a + b - 1.0, 0.0);
  if (!(p_joint >= lower && p_joint <= upper)) {
    throw Error(ErrorCode::FrechetViolation,
                "joint probability " + std::to_string(p_joint) +
                    " violates the Frechet bounds [" + std::to_string(lower) + ", " +
                    std::to_string(upper) + "]");
  }
}

double closed_form_association(double p_a, double p_b, double p_joint) noexcept {
  return (1.0 - p_a * p_b / p_joint) / ((1.0 - p_a) * (1.0 - p_b));
}

LocalAssociation solve_association(const EventTriple& t) {
  const double p = t.p_joint();
  const double w = p > 0.0 ? closed_form_association(t.p_a().value(), t.p_b().value(), p)
                           : -INFINITY;
  if (std::abs(w) <= 1.0) return {Association(w), false};
  if (std::abs(w) <= 1.0 + kAssociationClampSlack) {
    return {Association(std::copysign(1.0, w)), true};
  }
  const auto range = attainable_interval(logistic_quantile(t.p_a()),
                                         logistic_quantile(t.p_b()));
  throw OutsideAttainableRange(p, range.lo.value(), range.hi.value());
}

LocalAssociation association_from_counts(std::uint64_t n11, std::uint64_t n10,
                                         std::uint64_t n01, std::uint64_t n00) {
  if (n11 == 0 || n10 == 0 || n01 == 0 || n00 == 0) {
    throw Error(ErrorCode::DegenerateTable,
                "2x2 table has an empty cell; the association is not representable");
  }
  const double n = static_cast<double>(n11) + static_cast<double>(n10) +
                   static_cast<double>(n01) + static_cast<double>(n00);
  const Probability p_a((static_cast<double>(n11) + static_cast<double>(n10)) / n);
  const Probability p_b((static_cast<double>(n11) + static_cast<double>(n01)) / n);
  return solve_association(EventTriple(p_a, p_b, static_cast<double>(n11) / n));
}

}  // namespace catsel
