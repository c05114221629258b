#include "catsel/identify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "catsel/errors.hpp"
#include "catsel/llr.hpp"

namespace catsel {

namespace {

constexpr double kRelevanceTolerance = 1e-12;

std::string cat(int k) { return "category " + std::to_string(k) + ": "; }

}  // namespace

ObservedSelectionTable::ObservedSelectionTable(int q, std::array<Probability, 2> p_sel,
                                               std::vector<std::array<Probability, 2>> p_joint)
    : q_(q), p_sel_(p_sel), p_joint_(std::move(p_joint)) {
  if (q_ < 2) throw Error(ErrorCode::InvalidInput, "q must be at least 2");
  if (p_joint_.size() != static_cast<std::size_t>(q_ - 1)) {
    throw Error(ErrorCode::InvalidInput, "p_joint must have q - 1 rows");
  }
  for (int z = 0; z < 2; ++z) {
    if (!(baseline_selected(z) > 0.0)) {
      throw Error(ErrorCode::SimplexViolation,
                  "selected mass of the non-baseline categories reaches P(S=1|Z=" +
                      std::to_string(z) + "); the baseline has no selected mass");
    }
  }
  const double nu0 = kernel::logit(p_sel_[0].value());
  const double nu1 = kernel::logit(p_sel_[1].value());
  if (std::abs(nu1 - nu0) < kRelevanceTolerance) {
    throw Error(ErrorCode::RelevanceViolation,
                "P(S=1|Z=0) equals P(S=1|Z=1); the instrument does not shift selection");
  }
  if (nu0 > nu1) {
    throw Error(ErrorCode::RelevanceViolation, "requires P(S=1|Z=0) < P(S=1|Z=1)");
  }
}

double ObservedSelectionTable::baseline_selected(int z) const {
  double sum = 0.0;
  for (const auto& row : p_joint_) sum += row.at(static_cast<std::size_t>(z)).value();
  return p_sel_.at(static_cast<std::size_t>(z)).value() - sum;
}

std::vector<double> ObservedSelectionTable::observables() const {
  std::vector<double> out;
  out.reserve(2 * p_joint_.size() + 2);
  for (const auto& row : p_joint_) {
    out.push_back(row[0].value());
    out.push_back(row[1].value());
  }
  out.push_back(p_sel_[0].value());
  out.push_back(p_sel_[1].value());
  return out;
}

LatentCategorical LatentCategorical::from_pi(std::vector<double> pi, std::vector<double> omega) {
  if (pi.size() < 2 || omega.size() + 1 != pi.size()) {
    throw Error(ErrorCode::DomainError, "need q >= 2 probabilities and q - 1 associations");
  }
  const double total = std::accumulate(pi.begin(), pi.end(), 0.0);
  for (double& p : pi) {
    p /= total;
    (void)Probability(p);
  }
  for (double w : omega) {
    if (!(std::abs(w) < 1.0)) throw Error(ErrorCode::DomainError, "|omega_k| must be < 1");
  }
  LatentCategorical out;
  const double log_base = std::log(pi.back());
  for (std::size_t k = 0; k + 1 < pi.size(); ++k) {
    out.mu.push_back(std::log(pi[k]) - log_base);
    out.lambda.push_back(kernel::logit(pi[k]));
  }
  out.pi = std::move(pi);
  out.omega = std::move(omega);
  return out;
}

LatentCategorical LatentCategorical::from_mu(const std::vector<double>& mu,
                                             std::vector<double> omega) {
  double m = 0.0;
  for (double v : mu) m = std::max(m, v);
  std::vector<double> pi;
  double total = std::exp(-m);
  for (double v : mu) total += std::exp(v - m);
  for (double v : mu) pi.push_back(std::exp(v - m) / total);
  pi.push_back(std::exp(-m) / total);
  return from_pi(std::move(pi), std::move(omega));
}

ObservedSelectionTable forward_map(const LatentCategorical& latent, LogOdds nu0, LogOdds nu1) {
  const int q = latent.q();
  std::vector<std::array<Probability, 2>> joint;
  joint.reserve(static_cast<std::size_t>(q - 1));
  for (int k = 0; k + 1 < q; ++k) {
    const LogOdds lambda(latent.lambda[static_cast<std::size_t>(k)]);
    const Association w(latent.omega[static_cast<std::size_t>(k)]);
    joint.push_back({amh_joint(lambda, nu0, w), amh_joint(lambda, nu1, w)});
  }
  try {
    return ObservedSelectionTable(q, {logistic_cdf(nu0), logistic_cdf(nu1)}, std::move(joint));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::SimplexViolation) {
      throw Error(ErrorCode::InfeasibleDGP, std::string("latent model is infeasible: ") + e.what());
    }
    throw;
  }
}

LambdaStar recover_lambda_star(Probability p_k0, Probability p_k1, LogOdds nu0, LogOdds nu1) {
  const double v0 = nu0.value();
  const double v1 = nu1.value();
  if (std::abs(v0 - v1) < kRelevanceTolerance) {
    throw Error(ErrorCode::RelevanceViolation, "nu0 equals nu1; lambda is not identified");
  }
  // Everything is scaled by e^-max(nu) so large selection log-odds cannot overflow.
  const double m = std::max(v0, v1);
  const double a0 = std::exp(v0 - m);
  const double a1 = std::exp(v1 - m);
  const double numer = v0 < v1 ? std::expm1(v0 - v1) : -std::expm1(v1 - v0);
  const double c0 = a0 * (1.0 - p_k0.value()) / p_k0.value();
  const double c1 = a1 * (1.0 - p_k1.value()) / p_k1.value();
  const double ratio = numer / (c0 - c1);
  if (!(ratio > 0.0) || !std::isfinite(ratio)) {
    throw Error(ErrorCode::NonIdentified,
                "two-instrument elimination gives a non-positive odds ratio; the table is "
                "inconsistent with an instrument-invariant association");
  }
  return {LogOdds(std::log(ratio)), (std::abs(c0) + std::abs(c1)) / std::abs(numer)};
}

MuRecovery recover_mu(const std::vector<double>& lambda_star) {
  if (lambda_star.empty()) throw Error(ErrorCode::DomainError, "need at least one category");
  MuRecovery out;
  double beta = 0.0;
  for (double l : lambda_star) {
    out.pi.push_back(kernel::logistic(l));
    beta += out.pi.back();
  }
  if (!(beta < 1.0)) {
    throw Error(ErrorCode::SimplexViolation,
                "recovered non-baseline probabilities sum to " + std::to_string(beta) +
                    "; no mass left for the baseline");
  }
  const double log_base = std::log1p(-beta);
  for (double p : out.pi) out.mu.push_back(std::log(p) - log_base);
  out.pi.push_back(1.0 - beta);
  return out;
}

Association recover_omega(LogOdds lambda_k, LogOdds nu0, Probability p_k0) {
  const double w = closed_form_association(kernel::logistic(lambda_k.value()),
                                           kernel::logistic(nu0.value()), p_k0.value());
  if (!(std::abs(w) < 1.0 - kInteriorityTolerance)) {
    throw Error(ErrorCode::InteriorityViolation,
                "recovered association " + std::to_string(w) + " is not interior");
  }
  return Association(w);
}

Identification identify_all(const ObservedSelectionTable& table) {
  const int q = table.q();
  const LogOdds nu0 = logistic_quantile(table.p_sel(0));
  const LogOdds nu1 = logistic_quantile(table.p_sel(1));

  Identification out;
  auto& diag = out.diagnostics;
  std::vector<double> lambda_star;
  for (int k = 1; k < q; ++k) {
    try {
      const auto ls = recover_lambda_star(table.p_joint(k, 0), table.p_joint(k, 1), nu0, nu1);
      lambda_star.push_back(ls.value.value());
      diag.condition.push_back(ls.condition);
      diag.max_condition = std::max(diag.max_condition, ls.condition);
    } catch (const Error& e) {
      throw e.with_category(k);
    }
  }

  auto mu = recover_mu(lambda_star);
  std::vector<double> omega;
  for (int k = 1; k < q; ++k) {
    const auto idx = static_cast<std::size_t>(k - 1);
    try {
      const double w = recover_omega(LogOdds(lambda_star[idx]), nu0, table.p_joint(k, 0)).value();
      if (std::abs(w) >= kInteriorityWarning) {
        diag.warnings.push_back(cat(k) + "association " + std::to_string(w) +
                                " is close to the boundary");
      }
      omega.push_back(w);
    } catch (const Error& e) {
      throw e.with_category(k);
    }
  }

  out.latent.mu = std::move(mu.mu);
  out.latent.pi = std::move(mu.pi);
  out.latent.lambda = lambda_star;
  out.latent.omega = std::move(omega);

  for (int k = 1; k < q; ++k) {
    const auto idx = static_cast<std::size_t>(k - 1);
    for (int z = 0; z < 2; ++z) {
      const double nu = z == 0 ? nu0.value() : nu1.value();
      const double fitted = kernel::amh(lambda_star[idx], nu, out.latent.omega[idx]);
      diag.max_residual =
          std::max(diag.max_residual, std::abs(fitted - table.p_joint(k, z).value()));
    }
  }
  return out;
}

ObservedSelectionTable rebaseline(const ObservedSelectionTable& table, int k) {
  const int q = table.q();
  if (k < 1 || k > q) throw Error(ErrorCode::DomainError, "category out of range");
  if (k == q) return table;
  std::vector<std::array<Probability, 2>> joint;
  for (int j = 1; j < q; ++j) {
    if (j == k) {
      joint.push_back({Probability(table.baseline_selected(0)),
                       Probability(table.baseline_selected(1))});
    } else {
      joint.push_back({table.p_joint(j, 0), table.p_joint(j, 1)});
    }
  }
  return ObservedSelectionTable(q, {table.p_sel(0), table.p_sel(1)}, std::move(joint));
}

ObservedSelectionTable table_from_dataset(const Dataset& data) {
  data.validate();
  const int q = data.q;
  std::array<double, 2> n_z{0, 0};
  std::array<double, 2> sel{0, 0};
  std::vector<std::array<double, 2>> cells(static_cast<std::size_t>(q), {0.0, 0.0});
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double zv = data.z[static_cast<Eigen::Index>(i)];
    if (zv != 0.0 && zv != 1.0) {
      throw Error(ErrorCode::InvalidInput, "empirical table needs a binary instrument");
    }
    const auto z = static_cast<std::size_t>(zv);
    n_z[z] += 1.0;
    if (data.s[i] == 1) {
      sel[z] += 1.0;
      cells[static_cast<std::size_t>(data.y[i] - 1)][z] += 1.0;
    }
  }
  for (std::size_t z = 0; z < 2; ++z) {
    if (n_z[z] == 0.0 || sel[z] == 0.0 || sel[z] == n_z[z]) {
      throw Error(ErrorCode::DegenerateTable,
                  "instrument value " + std::to_string(z) + " has a degenerate selection rate");
    }
    for (int k = 0; k < q; ++k) {
      if (cells[static_cast<std::size_t>(k)][z] == 0.0) {
        throw Error(ErrorCode::DegenerateTable,
                    "empty cell for category " + std::to_string(k + 1) + " at z=" +
                        std::to_string(z),
                    k + 1);
      }
    }
  }
  std::vector<std::array<Probability, 2>> joint;
  for (int k = 0; k + 1 < q; ++k) {
    const auto& c = cells[static_cast<std::size_t>(k)];
    joint.push_back({Probability(c[0] / n_z[0]), Probability(c[1] / n_z[1])});
  }
  return ObservedSelectionTable(q, {Probability(sel[0] / n_z[0]), Probability(sel[1] / n_z[1])},
                                std::move(joint));
}

std::vector<InstrumentPair> pairwise_tables(const InstrumentedTable& multi) {
  const std::size_t m = multi.p_sel.size();
  if (multi.p_joint.size() != static_cast<std::size_t>(multi.q - 1)) {
    throw Error(ErrorCode::InvalidInput, "p_joint must have q - 1 rows");
  }
  for (const auto& row : multi.p_joint) {
    if (row.size() != m) throw Error(ErrorCode::InvalidInput, "ragged p_joint rows");
  }
  std::vector<InstrumentPair> out;
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const bool swap = multi.p_sel[a] > multi.p_sel[b];
      const std::size_t lo = swap ? b : a;
      const std::size_t hi = swap ? a : b;
      std::vector<std::array<Probability, 2>> joint;
      for (const auto& row : multi.p_joint) joint.push_back({Probability(row[lo]), Probability(row[hi])});
      out.push_back({static_cast<int>(lo), static_cast<int>(hi),
                     ObservedSelectionTable(multi.q,
                                            {Probability(multi.p_sel[lo]), Probability(multi.p_sel[hi])},
                                            std::move(joint))});
    }
  }
  return out;
}

OveridentificationReport overidentification_check(const std::vector<InstrumentPair>& pairs,
                                                  double tolerance) {
  std::set<int> values;
  for (const auto& p : pairs) {
    values.insert(p.z_lo);
    values.insert(p.z_hi);
  }
  if (values.size() < 3) {
    throw Error(ErrorCode::InsufficientInstruments,
                "overidentification needs at least three instrument values");
  }
  OveridentificationReport rep;
  rep.pairs = pairs;
  rep.tolerance = tolerance;
  for (const auto& p : pairs) rep.fits.push_back(identify_all(p.table));
  for (std::size_t a = 0; a < rep.fits.size(); ++a) {
    for (std::size_t b = a + 1; b < rep.fits.size(); ++b) {
      const auto& la = rep.fits[a].latent;
      const auto& lb = rep.fits[b].latent;
      for (std::size_t k = 0; k < la.mu.size(); ++k) {
        rep.max_mu_discrepancy = std::max(rep.max_mu_discrepancy, std::abs(la.mu[k] - lb.mu[k]));
        rep.max_omega_discrepancy =
            std::max(rep.max_omega_discrepancy, std::abs(la.omega[k] - lb.omega[k]));
      }
    }
  }
  rep.flagged = std::max(rep.max_mu_discrepancy, rep.max_omega_discrepancy) > tolerance;
  return rep;
}

}  // namespace catsel
