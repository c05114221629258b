#pragma once

// Data-generating process for the selection model and a Monte Carlo harness.
//
// Random numbers come from counter-based SplitMix64 streams. A dataset with
// seed s draws row i from the stream derive_seed(s, i); replication r of a
// Monte Carlo study uses dataset seed derive_seed(root, r); feasibility probes
// use derive_seed(derive_seed(root, kProbeStream), j). No stream depends on
// the worker count or on n.

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "catsel/dataset.hpp"
#include "catsel/estimate.hpp"
#include "catsel/identify.hpp"

namespace catsel {

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) noexcept;

inline constexpr std::uint64_t kProbeStream = 0x70726f6265ULL;

/// SplitMix64 as a UniformRandomBitGenerator.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;

 private:
  std::uint64_t state_;
};

enum class CovariateKind { Constant, StandardNormal, SymmetricBinary, Uniform };

struct CovariateSpec {
  CovariateKind kind = CovariateKind::Constant;
  double a = 0.0;  ///< Uniform lower bound
  double b = 1.0;  ///< Uniform upper bound
};

std::string covariate_kind_name(CovariateKind kind);
CovariateKind covariate_kind_from_name(const std::string& name);

struct DGPConfig {
  int q = 2;
  ModelParams true_params;
  std::vector<CovariateSpec> covariates;  ///< length d_x
  double instrument_rate = 0.5;           ///< P(Z = 1)
  std::size_t n = 1000;
  std::uint64_t seed = 0;

  std::size_t dx() const noexcept { return covariates.size(); }
  /// Throws InvalidConfig on inconsistent dimensions, n = 0 or a rate outside (0,1).
  void validate() const;
};

/// q = 3, x = (1, N(0,1)), beta1 = (0.7, 0.3), beta2 = (0.2, -0.4),
/// gamma1 = (0.4, 0.2), gamma2 = (-0.3, 0.1), delta = (-0.2, 0.5, 1.0), P(Z=1) = 0.5.
DGPConfig canonical_config(std::size_t n = 2000, std::uint64_t seed = 42);

/// P(Y = c_k, S = s | W = w); cell[k - 1][s] for k = 1..q.
struct JointRowTable {
  std::vector<std::array<double, 2>> cell;

  int q() const noexcept { return static_cast<int>(cell.size()); }
  double total() const noexcept;
  double selected() const noexcept;
};

/// Row table with the baseline and unselected cells obtained by marginal
/// subtraction. Cells in [-1e-12, 0) are set to 0; anything lower throws
/// InfeasibleDGP naming the cell (and `row` when given).
JointRowTable row_joint_table(const Vector& x, double z, const ModelParams& params,
                              std::optional<std::size_t> row = std::nullopt);

/// Same computation without the hard check; cells may be negative.
JointRowTable row_joint_table_unchecked(const Vector& x, double z, const ModelParams& params);

struct ProbeFailure {
  std::size_t probe = 0;
  int category = 0;  ///< 1-based
  int selected = 0;
  double value = 0.0;
};

struct FeasibilityReport {
  std::size_t probes = 0;
  std::size_t feasible = 0;
  double rate = 0.0;
  /// Smallest cell over all probes (negative when infeasible).
  double worst_margin = 0.0;
  bool accepted = false;
  std::vector<ProbeFailure> failures;  ///< first few located failures
};

FeasibilityReport validate_config(const DGPConfig& cfg, std::size_t probes = 10000);

/// Covariate row and instrument drawn from `rng`.
void draw_covariates(const DGPConfig& cfg, SplitMix64& rng, Eigen::Ref<Vector> x, double& z);

Dataset sample_dataset(const DGPConfig& cfg, unsigned workers = 1);

/// Population P(Y = c_k, S = 1 | Z = z) and P(S = 1 | Z = z), averaging row
/// tables over `draws` covariate vectors per instrument value. Exact when all
/// covariates are constant.
InstrumentedTable population_table(const DGPConfig& cfg, std::size_t draws = 100000);

/// Coordinate names in theta order: beta1[1], ..., gamma{q-1}[d_x].
std::vector<std::string> theta_labels(int q, std::size_t dx);

struct MCReport {
  std::size_t n = 0;
  std::size_t replications = 0;
  std::size_t failures = 0;        ///< replications without usable estimates and SEs
  std::size_t nonconverged = 0;    ///< subset of failures where the fit itself failed
  double failure_rate = 0.0;
  double nonconvergence_rate = 0.0;
  std::vector<std::string> labels;
  Vector truth;
  Vector bias;
  Vector rmse;
  Vector mean_se;
  Vector mean_se_influence;
  std::optional<Vector> empirical_sd;  ///< absent when fewer than two fits succeed
  Vector coverage;
  Vector coverage_influence;
  double rmse_total = 0.0;        ///< sqrt of the mean squared error over all coordinates
  double median_sup_error = 0.0;  ///< median over replications of max_j |theta_hat_j - theta0_j|
  std::vector<std::string> failure_reasons;
  /// Successful replications: one row of estimates each, with replication index.
  Matrix estimates;
  std::vector<std::size_t> replication_index;

  /// Every coordinate's coverage inside [lo, hi].
  static bool coverage_ok(const Vector& c, double lo = 0.90, double hi = 0.98);
};

inline constexpr double kMaxFailureRate = 0.2;

/// Replications run on `workers` threads; each fit is single-threaded, so the
/// report does not depend on the worker count. Fits that converge without a
/// usable variance are excluded from the moments but do not count as
/// non-convergence. Throws TooManyFailures when more than 20% of
/// replications fail to converge.
MCReport monte_carlo(const DGPConfig& cfg, std::size_t replications,
                     const EstimatorConfig& est_cfg, unsigned workers = 1);

}  // namespace catsel
