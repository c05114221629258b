#pragma once

// Local logistic representation: the unique association w with
// P(A, B) = Lambda2(logit P(A), logit P(B), w).

#include <cstdint>

#include "catsel/bilogistic.hpp"

namespace catsel {

/// Marginals P(A), P(B) and the joint P(A and B), checked against the
/// Frechet bounds at construction.
class EventTriple {
 public:
  /// Throws FrechetViolation if the joint is outside
  /// [max(p_a + p_b - 1, 0), min(p_a, p_b)].
  EventTriple(Probability p_a, Probability p_b, double p_joint);

  Probability p_a() const noexcept { return p_a_; }
  Probability p_b() const noexcept { return p_b_; }
  double p_joint() const noexcept { return p_joint_; }

 private:
  Probability p_a_;
  Probability p_b_;
  double p_joint_;
};

struct LocalAssociation {
  Association omega;
  /// Set when rounding pushed |w| marginally past 1 and it was clamped.
  bool clamped = false;
};

/// Closed-form inversion of Lambda2 in its association argument, written
/// directly in probability space:
///   w = (1 - p_a p_b / p) / ((1 - p_a)(1 - p_b)).
/// No range checks.
double closed_form_association(double p_a, double p_b, double p_joint) noexcept;

/// |w| within this excess over 1 is treated as rounding and clamped.
inline constexpr double kAssociationClampSlack = 1e-9;

/// Throws OutsideAttainableRange (carrying the attainable interval) when the
/// joint is Frechet-feasible but not representable by Lambda2.
LocalAssociation solve_association(const EventTriple& t);

/// Cell counts of a 2x2 table: n11 = #(A, B), n10 = #(A, not B),
/// n01 = #(not A, B), n00 = #(neither). Any empty cell is a DegenerateTable.
LocalAssociation association_from_counts(std::uint64_t n11, std::uint64_t n10,
                                         std::uint64_t n01, std::uint64_t n00);

}  // namespace catsel
