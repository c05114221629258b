#pragma once

// Closed-form identification of the latent category distribution and the
// category-specific selection associations from the selected-sample joint
// probabilities at two instrument values.
//
// Observables, for k = 1..q-1 and z in {0, 1}:
//   p_joint[k][z] = P(Y = c_k, S = 1 | Z = z),   p_sel[z] = P(S = 1 | Z = z).
// Model: p_joint[k][z] = Lambda2(lambda_k, nu_z, omega_k) with
// nu_z = logit p_sel[z], lambda_k = logit pi_k and omega_k free of z.

#include <array>
#include <string>
#include <vector>

#include "catsel/bilogistic.hpp"
#include "catsel/dataset.hpp"

namespace catsel {

class ObservedSelectionTable {
 public:
  /// Validates on construction: q >= 2, one row per non-baseline category,
  /// sum_k p_joint[k][z] < p_sel[z], and p_sel[0] < p_sel[1] (the instrument
  /// must raise selection; equal or reversed rates are a RelevanceViolation).
  ObservedSelectionTable(int q, std::array<Probability, 2> p_sel,
                         std::vector<std::array<Probability, 2>> p_joint);

  int q() const noexcept { return q_; }
  Probability p_sel(int z) const { return p_sel_.at(static_cast<std::size_t>(z)); }
  /// k is 1-based, k < q.
  Probability p_joint(int k, int z) const {
    return p_joint_.at(static_cast<std::size_t>(k - 1)).at(static_cast<std::size_t>(z));
  }
  /// P(Y = c_q, S = 1 | Z = z), implied by subtraction.
  double baseline_selected(int z) const;
  /// The 2q observable scalars: p_joint row-major (2(q - 1)), then both p_sel.
  std::vector<double> observables() const;

 private:
  int q_;
  std::array<Probability, 2> p_sel_;
  std::vector<std::array<Probability, 2>> p_joint_;
};

/// Recovered (pi, mu, lambda, omega); mu_q = 0 is implicit.
struct LatentCategorical {
  std::vector<double> mu;      ///< q - 1 baseline log-odds
  std::vector<double> lambda;  ///< q - 1 logits of pi_k
  std::vector<double> omega;   ///< q - 1 associations, |omega_k| < 1
  std::vector<double> pi;      ///< q probabilities, sums to 1

  int q() const noexcept { return static_cast<int>(pi.size()); }

  /// Builds from category probabilities (q entries, renormalized) and
  /// associations (q - 1 entries). Throws DomainError on invalid values.
  static LatentCategorical from_pi(std::vector<double> pi, std::vector<double> omega);
  /// Builds from baseline log-odds mu (q - 1 entries) through the softmax.
  static LatentCategorical from_mu(const std::vector<double>& mu, std::vector<double> omega);
};

/// Throws InfeasibleDGP if the implied baseline selected mass is not positive.
ObservedSelectionTable forward_map(const LatentCategorical& latent, LogOdds nu0, LogOdds nu1);

struct LambdaStar {
  LogOdds value;
  /// Scale-free conditioning of the two-equation elimination:
  /// (|e^nu0 (1/p0 - 1)| + |e^nu1 (1/p1 - 1)|) / |e^nu0 - e^nu1|.
  double condition;
};

/// Eliminates omega_k between the z = 0 and z = 1 equations:
///   e^lambda = (e^nu0 - e^nu1) / (e^nu0 (1/p0 - 1) - e^nu1 (1/p1 - 1)).
/// Throws RelevanceViolation if |nu0 - nu1| < 1e-12, NonIdentified if the
/// ratio is not positive and finite.
LambdaStar recover_lambda_star(Probability p_k0, Probability p_k1, LogOdds nu0, LogOdds nu1);

struct MuRecovery {
  std::vector<double> mu;  ///< q - 1
  std::vector<double> pi;  ///< q
};

/// Inverts lambda_k = log(e^mu_k / sum_{j != k} e^mu_j) with mu_q = 0.
/// Throws SimplexViolation when sum_k Lambda(lambda_k) >= 1.
MuRecovery recover_mu(const std::vector<double>& lambda_star);

inline constexpr double kInteriorityTolerance = 1e-12;
inline constexpr double kInteriorityWarning = 0.999;

/// omega_k from the z = 0 equation. Throws InteriorityViolation if
/// |omega_k| >= 1 - 1e-12.
Association recover_omega(LogOdds lambda_k, LogOdds nu0, Probability p_k0);

struct IdentificationDiagnostics {
  std::vector<double> condition;  ///< per category, see LambdaStar
  double max_condition = 0.0;
  /// Largest |forward_map(result) - input| over all cells.
  double max_residual = 0.0;
  std::vector<std::string> warnings;
};

struct Identification {
  LatentCategorical latent;
  IdentificationDiagnostics diagnostics;
};

/// Full recovery; errors raised by a per-category step carry that category.
Identification identify_all(const ObservedSelectionTable& table);

/// Swaps category k with the baseline c_q so that k becomes the new baseline.
ObservedSelectionTable rebaseline(const ObservedSelectionTable& table, int k);

/// Empirical plug-in from microdata with a binary instrument. Throws
/// DegenerateTable on empty cells (no smoothing) and InvalidInput when z is
/// not 0/1.
ObservedSelectionTable table_from_dataset(const Dataset& data);

/// Joint probabilities at m >= 3 instrument values.
struct InstrumentedTable {
  int q = 2;
  std::vector<double> p_sel;                 ///< m values
  std::vector<std::vector<double>> p_joint;  ///< [k-1][z], q - 1 rows of m values
};

struct InstrumentPair {
  int z_lo;
  int z_hi;
  ObservedSelectionTable table;
};

/// All pairwise two-value tables, each ordered so that p_sel rises.
std::vector<InstrumentPair> pairwise_tables(const InstrumentedTable& multi);

struct OveridentificationReport {
  std::vector<InstrumentPair> pairs;
  std::vector<Identification> fits;
  double max_mu_discrepancy = 0.0;
  double max_omega_discrepancy = 0.0;
  double tolerance = 0.0;
  bool flagged = false;
};

/// Identifies from every pair and reports the largest pairwise disagreement.
/// Throws InsufficientInstruments when fewer than three instrument values
/// are covered.
OveridentificationReport overidentification_check(const std::vector<InstrumentPair>& pairs,
                                                  double tolerance);

}  // namespace catsel
