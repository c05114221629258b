#pragma once

// Two-step multinomial logit with sample selection.
//
//   mu_k(X)       = X' beta_k          (beta_q = 0)
//   logit P(S=1|W) = W' delta          (W = (X, Z))
//   omega_k(X)    = tanh(X' gamma_k)
//   P(Y=c_k, S=1 | W) = Lambda2(u_k, W'delta, omega_k),
//   u_k = X'beta_k - log sum_{j != k} e^{X'beta_j}.
//
// Step 1 fits delta by logit of S on W. Step 2 maximizes the selected-sample
// log-likelihood in theta = (beta_1..beta_{q-1}, gamma_1..gamma_{q-1}) with
// W'delta_hat plugged in. The variance accounts for the generated regressor.

#include <optional>
#include <string>
#include <vector>

#include "catsel/dataset.hpp"
#include "catsel/numerics.hpp"

namespace catsel {

struct ModelParams {
  Vector delta;               ///< d_w = d_x + 1
  std::vector<Vector> beta;   ///< q - 1 vectors of d_x
  std::vector<Vector> gamma;  ///< q - 1 vectors of d_x

  int q() const noexcept { return static_cast<int>(beta.size()) + 1; }
  std::size_t dx() const noexcept { return beta.empty() ? 0 : static_cast<std::size_t>(beta[0].size()); }

  /// Stacked (beta_1, ..., beta_{q-1}, gamma_1, ..., gamma_{q-1}).
  Vector theta() const;
  static ModelParams from_theta(const Vector& theta, int q, std::size_t dx, Vector delta);
  /// Throws DomainError on shape mismatch or non-finite entries.
  void validate(int q, std::size_t dx) const;
};

inline std::size_t theta_dim(int q, std::size_t dx) {
  return 2 * static_cast<std::size_t>(q - 1) * dx;
}

struct EstimatorConfig {
  /// Adds log(Lambda(W'delta) - sum_{k<q} P_k) for selected baseline rows.
  /// Off by default: the literal objective uses non-baseline selected rows only.
  bool include_baseline_term = false;
  /// Use the direct-derivative-only scores in the variance meat.
  bool literal_scores = false;
  int max_iter = 200;
  double tol = 1e-8;
  double step_cap = 5.0;
  double hessian_step = 1e-5;
  double saturation_threshold = 15.0;
  double max_condition = 1e12;
  unsigned workers = 1;
};

/// Selection-equation logit fit.
struct FirstStage {
  Vector delta;
  Vector std_errors;
  double loglik = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
};

/// Throws RankDeficient when W lacks full column rank and SeparationDetected
/// when the selection indicator is perfectly predicted.
FirstStage first_stage_logit(const Dataset& data, const EstimatorConfig& cfg = {});

/// u_k = x'beta_k - log(sum_{j != k} e^{x'beta_j}) with the baseline e^0
/// included in the sum. k is 1-based and < q.
double category_index(const Vector& x, const std::vector<Vector>& beta, int k);

/// Selected-sample log-likelihood. Throws NonFiniteLik naming the first
/// offending row. An empty contributing set gives 0.
double selected_loglik(const Dataset& data, const Vector& theta, const Vector& delta,
                       const EstimatorConfig& cfg = {});

/// Full analytic gradient of selected_loglik in theta, including the
/// cross-category beta_j terms.
Vector score_theta(const Dataset& data, const Vector& theta, const Vector& delta,
                   const EstimatorConfig& cfg = {});

/// Per-row full scores, n x dim(theta).
Matrix score_rows(const Dataset& data, const Vector& theta, const Vector& delta,
                  const EstimatorConfig& cfg = {});

/// Per-row direct-derivative scores: each row differentiates log P_ik in its
/// own beta_k and gamma_k only. Not the gradient of the objective.
Matrix literal_score_rows(const Dataset& data, const Vector& theta, const Vector& delta);

struct SecondStage {
  Vector theta;
  double loglik = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  int gradient_fallbacks = 0;
};

/// Throws NonIdentified when a non-baseline category has no selected rows and
/// NoConvergence (carrying the best iterate) after cfg.max_iter iterations.
/// Without `init`, starts from the selected-sample multinomial logit with gamma = 0.
SecondStage second_stage_fit(const Dataset& data, const Vector& delta,
                             const std::optional<Vector>& init = std::nullopt,
                             const EstimatorConfig& cfg = {});

/// Plain multinomial logit of Y on X over the selected rows.
struct MultinomialLogit {
  std::vector<Vector> beta;  ///< q - 1
  Vector std_errors;         ///< stacked like beta
  bool converged = false;
};

MultinomialLogit selected_sample_mnl(const Dataset& data, const EstimatorConfig& cfg = {});

struct SandwichVariance {
  /// A^-1 (E[s_t s_t'] + E[s_t s_d'] D^-1 E[s_d s_t']) A^-1
  SymMatrix vtheta;
  /// Var of the influence function A^-1 (s_t + G D^-1 s_d), G = E[d s_t / d delta']
  SymMatrix vtheta_influence;
  /// A^-1 E[s_t s_t'] A^-1, delta treated as known
  SymMatrix vtheta_known_delta;
  Vector std_errors;
  Vector std_errors_influence;
  SymMatrix a;
  SymMatrix d;
  double cond_a = 0.0;
  double cond_d = 0.0;
};

/// Sample-average plug-in variances; standard errors are sqrt(diag(V) / n).
/// Throws SingularInformation if A or D is not positive definite or has a
/// condition number above cfg.max_condition.
SandwichVariance sandwich_variance(const Dataset& data, const Vector& theta_hat,
                                   const Vector& delta_hat, const EstimatorConfig& cfg = {});

struct FitDiagnostics {
  double gradient_norm = 0.0;
  double cond_a = 0.0;
  double cond_d = 0.0;
  std::size_t saturated_rows = 0;
  double instrument_t = 0.0;
  bool weak_instrument = false;
  int gradient_fallbacks = 0;
  std::vector<std::string> warnings;
};

struct FitResult {
  ModelParams params;
  FirstStage first_stage;
  SymMatrix vtheta;
  SymMatrix vtheta_influence;
  Vector std_errors;
  Vector std_errors_influence;
  bool variance_available = false;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  std::size_t n = 0;
  FitDiagnostics diagnostics;
};

/// First stage, second stage and variance. Non-convergence and variance
/// failures are reported in the result rather than thrown.
FitResult estimate_two_step(const Dataset& data, const EstimatorConfig& cfg = {});

/// Rows with |x'gamma_k| above the threshold for some k.
std::size_t count_saturated_rows(const Dataset& data, const Vector& theta, double threshold);

}  // namespace catsel
