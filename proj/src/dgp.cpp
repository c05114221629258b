#include "catsel/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "catsel/bilogistic.hpp"
#include "catsel/errors.hpp"
#include "catsel/parallel.hpp"

namespace catsel {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr double kCellSlack = 1e-12;
constexpr std::size_t kMaxReportedFailures = 20;
}  // namespace

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) noexcept {
  return splitmix64_mix(root ^ splitmix64_mix((stream + 1) * kGolden));
}

SplitMix64::result_type SplitMix64::operator()() noexcept {
  state_ += kGolden;
  return splitmix64_mix(state_);
}

double SplitMix64::uniform() noexcept {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

std::string covariate_kind_name(CovariateKind kind) {
  switch (kind) {
    case CovariateKind::Constant: return "constant";
    case CovariateKind::StandardNormal: return "normal";
    case CovariateKind::SymmetricBinary: return "binary";
    case CovariateKind::Uniform: return "uniform";
  }
  return "constant";
}

CovariateKind covariate_kind_from_name(const std::string& name) {
  if (name == "constant") return CovariateKind::Constant;
  if (name == "normal") return CovariateKind::StandardNormal;
  if (name == "binary") return CovariateKind::SymmetricBinary;
  if (name == "uniform") return CovariateKind::Uniform;
  throw Error(ErrorCode::InvalidConfig, "unknown covariate kind '" + name +
                                            "' (expected constant, normal, binary or uniform)");
}

void DGPConfig::validate() const {
  if (q < 2) throw Error(ErrorCode::InvalidConfig, "q must be at least 2");
  if (covariates.empty()) throw Error(ErrorCode::InvalidConfig, "at least one covariate is required");
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "n must be at least 1");
  if (!(instrument_rate > 0.0 && instrument_rate < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "instrument_rate must lie in (0, 1)");
  }
  for (const auto& c : covariates) {
    if (c.kind == CovariateKind::Uniform && !(c.a < c.b)) {
      throw Error(ErrorCode::InvalidConfig, "uniform covariate needs a < b");
    }
  }
  try {
    true_params.validate(q, dx());
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("true_params: ") + e.what());
  }
}

DGPConfig canonical_config(std::size_t n, std::uint64_t seed) {
  DGPConfig cfg;
  cfg.q = 3;
  cfg.covariates = {{CovariateKind::Constant}, {CovariateKind::StandardNormal}};
  cfg.true_params.beta = {Vector{{0.7, 0.3}}, Vector{{0.2, -0.4}}};
  cfg.true_params.gamma = {Vector{{0.4, 0.2}}, Vector{{-0.3, 0.1}}};
  cfg.true_params.delta = Vector{{-0.2, 0.5, 1.0}};
  cfg.instrument_rate = 0.5;
  cfg.n = n;
  cfg.seed = seed;
  return cfg;
}

double JointRowTable::total() const noexcept {
  double t = 0.0;
  for (const auto& c : cell) t += c[0] + c[1];
  return t;
}

double JointRowTable::selected() const noexcept {
  double t = 0.0;
  for (const auto& c : cell) t += c[1];
  return t;
}

JointRowTable row_joint_table_unchecked(const Vector& x, double z, const ModelParams& params) {
  const int m1 = static_cast<int>(params.beta.size());
  const auto dx = x.size();
  const double v = x.dot(params.delta.head(dx)) + z * params.delta[dx];
  std::vector<double> eta(static_cast<std::size_t>(m1));
  double m = 0.0;
  for (int k = 0; k < m1; ++k) {
    eta[static_cast<std::size_t>(k)] = x.dot(params.beta[static_cast<std::size_t>(k)]);
    m = std::max(m, eta[static_cast<std::size_t>(k)]);
  }
  double denom = std::exp(-m);
  for (double e : eta) denom += std::exp(e - m);

  JointRowTable t;
  t.cell.resize(static_cast<std::size_t>(m1) + 1);
  double selected = 0.0;
  for (int k = 0; k < m1; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const double u = category_index(x, params.beta, k + 1);
    const double pi = std::exp(eta[kk] - m) / denom;
    const double p1 = kernel::amh(u, v, std::tanh(x.dot(params.gamma[kk])));
    t.cell[kk] = {pi - p1, p1};
    selected += p1;
  }
  const double pi_q = std::exp(-m) / denom;
  const double base1 = kernel::logistic(v) - selected;
  t.cell.back() = {pi_q - base1, base1};
  return t;
}

JointRowTable row_joint_table(const Vector& x, double z, const ModelParams& params,
                              std::optional<std::size_t> row) {
  JointRowTable t = row_joint_table_unchecked(x, z, params);
  for (std::size_t k = 0; k < t.cell.size(); ++k) {
    for (int s = 0; s < 2; ++s) {
      double& c = t.cell[k][static_cast<std::size_t>(s)];
      if (c >= 0.0) continue;
      if (c >= -kCellSlack) {
        c = 0.0;
        continue;
      }
      std::string where = "cell (k=" + std::to_string(k + 1) + ", s=" + std::to_string(s) + ")";
      if (row) where = "row " + std::to_string(*row) + " " + where;
      throw Error(ErrorCode::InfeasibleDGP,
                  where + " has negative probability " + std::to_string(c) +
                      "; the parameters over-allocate selected mass");
    }
  }
  return t;
}

void draw_covariates(const DGPConfig& cfg, SplitMix64& rng, Eigen::Ref<Vector> x, double& z) {
  for (std::size_t j = 0; j < cfg.covariates.size(); ++j) {
    const auto& c = cfg.covariates[j];
    const auto jj = static_cast<Eigen::Index>(j);
    switch (c.kind) {
      case CovariateKind::Constant:
        x[jj] = 1.0;
        break;
      case CovariateKind::StandardNormal: {
        std::normal_distribution<double> nd(0.0, 1.0);
        x[jj] = nd(rng);
        break;
      }
      case CovariateKind::SymmetricBinary:
        x[jj] = rng.uniform() < 0.5 ? -1.0 : 1.0;
        break;
      case CovariateKind::Uniform:
        x[jj] = c.a + (c.b - c.a) * rng.uniform();
        break;
    }
  }
  z = rng.uniform() < cfg.instrument_rate ? 1.0 : 0.0;
}

FeasibilityReport validate_config(const DGPConfig& cfg, std::size_t probes) {
  cfg.validate();
  FeasibilityReport rep;
  rep.probes = probes;
  rep.worst_margin = std::numeric_limits<double>::infinity();
  const std::uint64_t root = derive_seed(cfg.seed, kProbeStream);
  Vector x(static_cast<Eigen::Index>(cfg.dx()));
  for (std::size_t j = 0; j < probes; ++j) {
    SplitMix64 rng(derive_seed(root, j));
    double z = 0.0;
    draw_covariates(cfg, rng, x, z);
    const auto t = row_joint_table_unchecked(x, z, cfg.true_params);
    bool ok = true;
    for (std::size_t k = 0; k < t.cell.size(); ++k) {
      for (int s = 0; s < 2; ++s) {
        const double c = t.cell[k][static_cast<std::size_t>(s)];
        rep.worst_margin = std::min(rep.worst_margin, c);
        if (c < -kCellSlack) {
          ok = false;
          if (rep.failures.size() < kMaxReportedFailures) {
            rep.failures.push_back({j, static_cast<int>(k) + 1, s, c});
          }
        }
      }
    }
    if (ok) ++rep.feasible;
  }
  rep.rate = probes == 0 ? 1.0 : static_cast<double>(rep.feasible) / static_cast<double>(probes);
  rep.accepted = rep.feasible == probes;
  if (probes == 0) rep.worst_margin = 0.0;
  return rep;
}

Dataset sample_dataset(const DGPConfig& cfg, unsigned workers) {
  cfg.validate();
  const std::size_t n = cfg.n;
  Dataset d;
  d.q = cfg.q;
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.dx()));
  d.z.resize(static_cast<Eigen::Index>(n));
  d.s.assign(n, 0);
  d.y.assign(n, 0);
  parallel_for(block_count(n), workers, [&](std::size_t b) {
    Vector x(static_cast<Eigen::Index>(cfg.dx()));
    const std::size_t end = std::min(n, (b + 1) * kRowBlock);
    for (std::size_t i = b * kRowBlock; i < end; ++i) {
      SplitMix64 rng(derive_seed(cfg.seed, i));
      double z = 0.0;
      draw_covariates(cfg, rng, x, z);
      const auto t = row_joint_table(x, z, cfg.true_params, i);
      // Inverse CDF over cells ordered (k=1,s=1), (k=1,s=0), ..., (q,s=0).
      const double u = rng.uniform() * t.total();
      double acc = 0.0;
      int cat = t.q();
      int sel = 0;
      bool found = false;
      for (int k = 0; k < t.q() && !found; ++k) {
        for (int s = 1; s >= 0; --s) {
          const double c = t.cell[static_cast<std::size_t>(k)][static_cast<std::size_t>(s)];
          if (c <= 0.0) continue;
          acc += c;
          cat = k + 1;
          sel = s;
          if (u < acc) {
            found = true;
            break;
          }
        }
      }
      const auto r = static_cast<Eigen::Index>(i);
      d.x.row(r) = x.transpose();
      d.z[r] = z;
      d.s[i] = static_cast<std::uint8_t>(sel);
      d.y[i] = sel == 1 ? cat : 0;
    }
  });
  return d;
}

InstrumentedTable population_table(const DGPConfig& cfg, std::size_t draws) {
  cfg.validate();
  const bool constant = std::all_of(cfg.covariates.begin(), cfg.covariates.end(), [](const auto& c) {
    return c.kind == CovariateKind::Constant;
  });
  if (constant) draws = 1;
  if (draws == 0) throw Error(ErrorCode::InvalidConfig, "population_table needs draws >= 1");
  InstrumentedTable out;
  out.q = cfg.q;
  out.p_sel.assign(2, 0.0);
  out.p_joint.assign(static_cast<std::size_t>(cfg.q - 1), std::vector<double>(2, 0.0));
  const std::uint64_t root = derive_seed(cfg.seed, kProbeStream + 1);
  Vector x(static_cast<Eigen::Index>(cfg.dx()));
  for (int z = 0; z < 2; ++z) {
    std::vector<JointRowTable> tables(draws);
    for (std::size_t j = 0; j < draws; ++j) {
      SplitMix64 rng(derive_seed(root, j));
      double ignored = 0.0;
      draw_covariates(cfg, rng, x, ignored);
      tables[j] = row_joint_table(x, static_cast<double>(z), cfg.true_params);
    }
    const auto zz = static_cast<std::size_t>(z);
    for (const auto& t : tables) {
      for (int k = 0; k < cfg.q - 1; ++k) out.p_joint[static_cast<std::size_t>(k)][zz] += t.cell[static_cast<std::size_t>(k)][1];
      out.p_sel[zz] += t.selected();
    }
    for (auto& row : out.p_joint) row[zz] /= static_cast<double>(draws);
    out.p_sel[zz] /= static_cast<double>(draws);
  }
  return out;
}

std::vector<std::string> theta_labels(int q, std::size_t dx) {
  std::vector<std::string> out;
  for (const char* block : {"beta", "gamma"}) {
    for (int k = 1; k < q; ++k) {
      for (std::size_t j = 1; j <= dx; ++j) {
        out.push_back(std::string(block) + std::to_string(k) + "[" + std::to_string(j) + "]");
      }
    }
  }
  return out;
}

bool MCReport::coverage_ok(const Vector& c, double lo, double hi) {
  return c.size() > 0 && (c.array() >= lo).all() && (c.array() <= hi).all();
}

namespace {

struct Replication {
  bool ok = false;
  bool converged = false;
  std::string reason;
  Vector theta, se, se_influence;
};

}  // namespace

MCReport monte_carlo(const DGPConfig& cfg, std::size_t replications,
                     const EstimatorConfig& est_cfg, unsigned workers) {
  cfg.validate();
  if (replications == 0) throw Error(ErrorCode::InvalidConfig, "replications must be >= 1");
  const Vector truth = cfg.true_params.theta();
  const auto p = truth.size();

  EstimatorConfig fit_cfg = est_cfg;
  fit_cfg.workers = 1;
  std::vector<Replication> reps(replications);
  parallel_for(replications, workers, [&](std::size_t r) {
    Replication& out = reps[r];
    try {
      DGPConfig c = cfg;
      c.seed = derive_seed(cfg.seed, r);
      const Dataset data = sample_dataset(c, 1);
      const FitResult fit = estimate_two_step(data, fit_cfg);
      out.converged = fit.converged;
      if (!fit.converged) {
        out.reason = "NoConvergence";
      } else if (!fit.variance_available) {
        out.reason = "SingularInformation";
      } else {
        out.ok = true;
        out.theta = fit.params.theta();
        out.se = fit.std_errors;
        out.se_influence = fit.std_errors_influence;
      }
    } catch (const Error& e) {
      out.reason = e.name();
    }
  });

  MCReport rep;
  rep.n = cfg.n;
  rep.replications = replications;
  rep.labels = theta_labels(cfg.q, cfg.dx());
  rep.truth = truth;
  std::vector<std::size_t> good;
  for (std::size_t r = 0; r < replications; ++r) {
    if (reps[r].ok) {
      good.push_back(r);
    } else {
      ++rep.failures;
      if (!reps[r].converged) ++rep.nonconverged;
      rep.failure_reasons.push_back("replication " + std::to_string(r) + ": " + reps[r].reason);
    }
  }
  const auto rd = static_cast<double>(replications);
  rep.failure_rate = static_cast<double>(rep.failures) / rd;
  rep.nonconvergence_rate = static_cast<double>(rep.nonconverged) / rd;
  if (rep.nonconvergence_rate > kMaxFailureRate) {
    throw Error(ErrorCode::TooManyFailures,
                std::to_string(rep.nonconverged) + " of " + std::to_string(replications) +
                    " replications failed to converge (limit 20%)");
  }
  if (good.empty()) {
    throw Error(ErrorCode::TooManyFailures, "no replication produced standard errors");
  }

  const auto m = static_cast<Eigen::Index>(good.size());
  const double md = static_cast<double>(m);
  rep.estimates.resize(m, p);
  rep.replication_index = good;
  Matrix se(m, p), se_if(m, p);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& r = reps[good[static_cast<std::size_t>(i)]];
    rep.estimates.row(i) = r.theta.transpose();
    se.row(i) = r.se.transpose();
    se_if.row(i) = r.se_influence.transpose();
  }
  const Matrix err = rep.estimates.rowwise() - truth.transpose();
  rep.bias = err.colwise().mean().transpose();
  rep.rmse = (err.array().square().colwise().sum() / md).sqrt().matrix().transpose();
  rep.rmse_total = std::sqrt(err.array().square().sum() / (md * static_cast<double>(p)));
  rep.mean_se = se.colwise().mean().transpose();
  rep.mean_se_influence = se_if.colwise().mean().transpose();
  if (m >= 2) {
    const Matrix centered = rep.estimates.rowwise() - rep.estimates.colwise().mean();
    rep.empirical_sd =
        (centered.array().square().colwise().sum() / (md - 1.0)).sqrt().matrix().transpose();
  }
  constexpr double z975 = 1.959963984540054;
  rep.coverage = ((err.array().abs() <= z975 * se.array()).cast<double>().colwise().sum() / md)
                     .matrix()
                     .transpose();
  rep.coverage_influence =
      ((err.array().abs() <= z975 * se_if.array()).cast<double>().colwise().sum() / md)
          .matrix()
          .transpose();
  std::vector<double> sup(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) sup[static_cast<std::size_t>(i)] = err.row(i).cwiseAbs().maxCoeff();
  if (!sup.empty()) {
    std::sort(sup.begin(), sup.end());
    const std::size_t h = sup.size() / 2;
    rep.median_sup_error = sup.size() % 2 == 1 ? sup[h] : 0.5 * (sup[h - 1] + sup[h]);
  }
  return rep;
}

}  // namespace catsel
