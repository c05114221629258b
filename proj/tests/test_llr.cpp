#include <doctest.h>

#include <cmath>
#include <random>

#include "catsel/bilogistic.hpp"
#include "catsel/llr.hpp"
#include "catsel/numerics.hpp"
#include "support.hpp"

using namespace catsel;
using catsel::test::code_of;

namespace {
double solve(double pa, double pb, double pj) {
  return solve_association(EventTriple(Probability(pa), Probability(pb), pj)).omega.value();
}
}  // namespace

TEST_CASE("solve_association examples") {
  CHECK(std::abs(solve(0.5, 0.5, 0.25)) <= 1e-15);
  // bisection oracle at 50 digits gives exactly 2/3
  CHECK(solve(0.5, 0.5, 0.3) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  try {
    solve(0.5, 0.5, 0.45);
    FAIL("expected OutsideAttainableRange");
  } catch (const OutsideAttainableRange& e) {
    CHECK(e.code() == ErrorCode::OutsideAttainableRange);
    CHECK(e.lo == doctest::Approx(0.2));
    CHECK(e.hi == doctest::Approx(1.0 / 3.0));
    CHECK(e.target == 0.45);
  }
}

TEST_CASE("Frechet feasibility is checked on construction") {
  CHECK(code_of([] { EventTriple(Probability(0.3), Probability(0.6), 0.31); }) ==
        ErrorCode::FrechetViolation);
  CHECK(code_of([] { EventTriple(Probability(0.7), Probability(0.6), 0.29); }) ==
        ErrorCode::FrechetViolation);
  CHECK(code_of([] { EventTriple(Probability(0.3), Probability(0.6), -0.01); }) ==
        ErrorCode::FrechetViolation);
  // feasible but outside the AMH range
  CHECK(code_of([] { solve(0.3, 0.6, 0.3); }) == ErrorCode::OutsideAttainableRange);
  CHECK(code_of([] { solve(0.3, 0.6, 0.0); }) == ErrorCode::OutsideAttainableRange);
}

TEST_CASE("rounding excursions past the boundary are clamped and flagged") {
  const double u = 0.4, v = -0.7;
  const Probability pa(kernel::logistic(u)), pb(kernel::logistic(v));

  const double just_over = kernel::amh(u, v, 1.0 + 5e-10);
  const auto c = solve_association(EventTriple(pa, pb, just_over));
  CHECK(c.clamped);
  CHECK(c.omega.value() == 1.0);

  const double just_under = kernel::amh(u, v, -1.0 - 5e-10);
  const auto d = solve_association(EventTriple(pa, pb, just_under));
  CHECK(d.clamped);
  CHECK(d.omega.value() == -1.0);

  const double inside = kernel::amh(u, v, 0.999);
  CHECK_FALSE(solve_association(EventTriple(pa, pb, inside)).clamped);

  const double far_over = kernel::amh(u, v, 1.0 + 1e-6);
  CHECK(code_of([&] { solve_association(EventTriple(pa, pb, far_over)); }) ==
        ErrorCode::OutsideAttainableRange);
}

TEST_CASE("association_from_counts") {
  CHECK(std::abs(association_from_counts(25, 25, 25, 25).omega.value()) <= 1e-15);
  const double w = association_from_counts(30, 20, 20, 30).omega.value();
  CHECK(w > 0.0);
  CHECK(w == doctest::Approx(solve(0.5, 0.5, 0.3)).epsilon(1e-14));
  CHECK(code_of([] { association_from_counts(0, 5, 7, 9); }) == ErrorCode::DegenerateTable);
  CHECK(code_of([] { association_from_counts(3, 0, 0, 9); }) == ErrorCode::DegenerateTable);
  CHECK(code_of([] { association_from_counts(0, 0, 0, 0); }) == ErrorCode::DegenerateTable);
}

TEST_CASE("round trip over random (u, v, omega)") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> uu(-6, 6), ww(-0.99, 0.99);
  for (int i = 0; i < 20000; ++i) {
    const double u = uu(rng), v = uu(rng), w = ww(rng);
    const double pj = kernel::amh(u, v, w);
    const double got = solve(kernel::logistic(u), kernel::logistic(v), pj);
    REQUIRE(std::abs(got - w) <= 1e-10);
    // and the recovered omega reproduces the joint probability
    REQUIRE(std::abs(kernel::amh(logistic_quantile(kernel::logistic(u)).value(),
                                 logistic_quantile(kernel::logistic(v)).value(), got) -
                     pj) <= 1e-12);
  }
}

TEST_CASE("sign of omega follows the covariance") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> up(0.02, 0.98), t(0.0, 1.0);
  int checked = 0;
  for (int i = 0; i < 20000; ++i) {
    const double pa = up(rng), pb = up(rng);
    const auto iv = attainable_interval(logistic_quantile(pa), logistic_quantile(pb));
    const double pj = iv.lo.value() + t(rng) * (iv.hi.value() - iv.lo.value());
    const double diff = pj - pa * pb;
    const double w = solve(pa, pb, pj);
    if (std::abs(diff) > 1e-12) {
      ++checked;
      REQUIRE((w > 0) == (diff > 0));
      REQUIRE(w != 0.0);
    }
  }
  CHECK(checked > 19000);
  CHECK(std::abs(solve(0.3, 0.8, 0.3 * 0.8)) <= 1e-12);
}

TEST_CASE("closed form agrees with bisection on G(r)") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> uu(-4, 4), ww(-0.98, 0.98);
  for (int i = 0; i < 2000; ++i) {
    const double u = uu(rng), v = uu(rng), w = ww(rng);
    const double pj = kernel::amh(u, v, w);
    const double root = bisect([&](double r) { return kernel::amh(u, v, r) - pj; }, -1.0, 1.0);
    const double closed = solve(kernel::logistic(u), kernel::logistic(v), pj);
    REQUIRE(std::abs(root - closed) <= 1e-10);
  }
}
