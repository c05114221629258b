#include "catsel/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "catsel/bilogistic.hpp"
#include "catsel/errors.hpp"
#include "catsel/parallel.hpp"

namespace catsel {

Vector ModelParams::theta() const {
  const auto dxi = static_cast<Eigen::Index>(dx());
  const auto m = static_cast<Eigen::Index>(beta.size());
  Vector t(2 * m * dxi);
  for (Eigen::Index k = 0; k < m; ++k) {
    t.segment(k * dxi, dxi) = beta[static_cast<std::size_t>(k)];
    t.segment((m + k) * dxi, dxi) = gamma[static_cast<std::size_t>(k)];
  }
  return t;
}

ModelParams ModelParams::from_theta(const Vector& theta, int q, std::size_t dx, Vector delta) {
  const auto dxi = static_cast<Eigen::Index>(dx);
  const Eigen::Index m = q - 1;
  if (theta.size() != 2 * m * dxi) throw Error(ErrorCode::DomainError, "theta has the wrong length");
  ModelParams p;
  p.delta = std::move(delta);
  for (Eigen::Index k = 0; k < m; ++k) {
    p.beta.push_back(theta.segment(k * dxi, dxi));
    p.gamma.push_back(theta.segment((m + k) * dxi, dxi));
  }
  return p;
}

void ModelParams::validate(int q, std::size_t dx) const {
  const auto dxi = static_cast<Eigen::Index>(dx);
  if (beta.size() != static_cast<std::size_t>(q - 1) || gamma.size() != beta.size()) {
    throw Error(ErrorCode::DomainError, "need q - 1 beta and gamma vectors");
  }
  if (delta.size() != dxi + 1 || !delta.allFinite()) {
    throw Error(ErrorCode::DomainError, "delta must be finite with d_x + 1 entries");
  }
  for (std::size_t k = 0; k < beta.size(); ++k) {
    if (beta[k].size() != dxi || gamma[k].size() != dxi || !beta[k].allFinite() ||
        !gamma[k].allFinite()) {
      throw Error(ErrorCode::DomainError, "beta/gamma must be finite with d_x entries");
    }
  }
}

namespace {

constexpr std::size_t kNoRow = std::numeric_limits<std::size_t>::max();

struct Layout {
  int q;
  Eigen::Index dx;
  Eigen::Index beta(int k) const { return (k - 1) * dx; }           // k 1-based
  Eigen::Index gamma(int k) const { return (q - 1 + k - 1) * dx; }  // k 1-based
  Eigen::Index dim() const { return 2 * (q - 1) * dx; }
};

// sech^2 stays positive where 1 - tanh^2 rounds to zero.
inline double sech2(double a) {
  const double c = 1.0 / std::cosh(a);
  return c * c;
}

/// Scratch space for one row; k indices are 0-based inside (category k+1).
struct RowWork {
  std::vector<double> eta, xg, u, s_excl, m_excl;
  std::vector<kernel::AmhEval> amh;
  explicit RowWork(int q)
      : eta(q - 1), xg(q - 1), u(q - 1), s_excl(q - 1), m_excl(q - 1), amh(q - 1) {}
};

// u_k with the shift and normalizer used for the softmax-excluding-k weights
// r_kj = e^{eta_j - m} / s.
inline void index_for(RowWork& w, int m1, int k) {
  double m = 0.0;  // baseline eta_q = 0
  for (int j = 0; j < m1; ++j) {
    if (j != k) m = std::max(m, w.eta[j]);
  }
  double s = std::exp(-m);
  for (int j = 0; j < m1; ++j) {
    if (j != k) s += std::exp(w.eta[j] - m);
  }
  w.m_excl[k] = m;
  w.s_excl[k] = s;
  w.u[k] = w.eta[k] - m - std::log(s);
}

// d u_k / d (x'beta_j), j != k
inline double cross_weight(const RowWork& w, int k, int j) {
  return -std::exp(w.eta[j] - w.m_excl[k]) / w.s_excl[k];
}

enum class ScoreKind { None, Full, Literal };

/// Log-likelihood contribution of row i; adds weight * score into `g` for
/// ScoreKind::Full / Literal. Returns -inf when the row's probability is not
/// positive, NaN when non-finite.
double row_contribution(const Dataset& data, std::size_t i, const Layout& L, const Vector& theta,
                        const Vector& delta, bool baseline_term, ScoreKind kind,
                        Eigen::Ref<Vector> g, RowWork& w) {
  if (data.s[i] == 0) return 0.0;
  const int y = data.y[i];
  const int m1 = L.q - 1;
  if (y == L.q && !baseline_term) return 0.0;

  const auto r = static_cast<Eigen::Index>(i);
  const auto x = data.x.row(r);
  const double weight = data.row_weight(i);
  const double v = x.dot(delta.head(L.dx)) + data.z[r] * delta[L.dx];
  for (int j = 0; j < m1; ++j) {
    w.eta[j] = x.dot(theta.segment(L.beta(j + 1), L.dx));
  }

  if (y < L.q) {
    const int k = y - 1;
    w.xg[k] = x.dot(theta.segment(L.gamma(k + 1), L.dx));
    index_for(w, m1, k);
    const double om = std::tanh(w.xg[k]);
    const auto a = kernel::amh_eval(w.u[k], v, om);
    if (kind != ScoreKind::None) {
      const double cu = weight * a.dlog_du;
      g.segment(L.beta(k + 1), L.dx) += cu * x.transpose();
      if (kind == ScoreKind::Full) {
        for (int j = 0; j < m1; ++j) {
          if (j != k) g.segment(L.beta(j + 1), L.dx) += cu * cross_weight(w, k, j) * x.transpose();
        }
      }
      g.segment(L.gamma(k + 1), L.dx) += weight * a.dlog_dw * sech2(w.xg[k]) * x.transpose();
    }
    return weight * a.log_value;
  }

  // Selected baseline row: log(Lambda(v) - sum_k P_k).
  double total = 0.0;
  for (int k = 0; k < m1; ++k) {
    w.xg[k] = x.dot(theta.segment(L.gamma(k + 1), L.dx));
    index_for(w, m1, k);
    w.amh[k] = kernel::amh_eval(w.u[k], v, std::tanh(w.xg[k]));
    total += w.amh[k].value;
  }
  const double rest = kernel::logistic(v) - total;
  if (!(rest > 0.0)) return -std::numeric_limits<double>::infinity();
  if (kind == ScoreKind::Full) {
    const double inv = -weight / rest;
    for (int k = 0; k < m1; ++k) {
      const auto& a = w.amh[k];
      const double du = inv * a.value * a.dlog_du;
      g.segment(L.beta(k + 1), L.dx) += du * x.transpose();
      for (int j = 0; j < m1; ++j) {
        if (j != k) g.segment(L.beta(j + 1), L.dx) += du * cross_weight(w, k, j) * x.transpose();
      }
      g.segment(L.gamma(k + 1), L.dx) += inv * a.value * a.dlog_dw * sech2(w.xg[k]) * x.transpose();
    }
  }
  return weight * std::log(rest);
}

struct Totals {
  double loglik = 0.0;
  std::size_t bad_row = kNoRow;
  Vector grad;
  Totals operator+(const Totals& o) const {
    Totals t;
    t.loglik = loglik + o.loglik;
    t.bad_row = std::min(bad_row, o.bad_row);
    if (grad.size() != 0) t.grad = grad + o.grad;
    return t;
  }
};

Totals evaluate(const Dataset& data, const Vector& theta, const Vector& delta,
                const EstimatorConfig& cfg, bool want_grad) {
  const Layout L{data.q, static_cast<Eigen::Index>(data.dx())};
  const std::size_t n = data.n();
  const std::size_t nb = block_count(n);
  if (nb == 0) {
    Totals t;
    if (want_grad) t.grad = Vector::Zero(L.dim());
    return t;
  }
  std::vector<Totals> parts(nb);
  parallel_for(nb, cfg.workers, [&](std::size_t b) {
    RowWork work(data.q);
    Totals t;
    Vector scratch = Vector::Zero(want_grad ? L.dim() : 0);
    const std::size_t end = std::min(n, (b + 1) * kRowBlock);
    for (std::size_t i = b * kRowBlock; i < end; ++i) {
      const double c = row_contribution(data, i, L, theta, delta, cfg.include_baseline_term,
                                        want_grad ? ScoreKind::Full : ScoreKind::None, scratch,
                                        work);
      if (!std::isfinite(c)) {
        t.bad_row = std::min(t.bad_row, i);
        continue;
      }
      t.loglik += c;
    }
    t.grad = std::move(scratch);
    parts[b] = std::move(t);
  });
  return pairwise_sum(parts, 0, nb);
}

Matrix per_row_scores(const Dataset& data, const Vector& theta, const Vector& delta,
                      const EstimatorConfig& cfg, ScoreKind kind) {
  const Layout L{data.q, static_cast<Eigen::Index>(data.dx())};
  const std::size_t n = data.n();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), L.dim());
  parallel_for(block_count(n), cfg.workers, [&](std::size_t b) {
    RowWork work(data.q);
    Vector g(L.dim());
    const std::size_t end = std::min(n, (b + 1) * kRowBlock);
    for (std::size_t i = b * kRowBlock; i < end; ++i) {
      g.setZero();
      const double c = row_contribution(data, i, L, theta, delta,
                                        kind == ScoreKind::Full && cfg.include_baseline_term,
                                        kind, g, work);
      if (!std::isfinite(c)) throw NonFiniteLik(i);
      out.row(static_cast<Eigen::Index>(i)) = g.transpose();
    }
  });
  return out;
}

void check_shapes(const Dataset& data, const Vector& theta, const Vector& delta) {
  const Layout L{data.q, static_cast<Eigen::Index>(data.dx())};
  if (theta.size() != L.dim()) throw Error(ErrorCode::DomainError, "theta has the wrong length");
  if (delta.size() != L.dx + 1) throw Error(ErrorCode::DomainError, "delta has the wrong length");
  if (!theta.allFinite() || !delta.allFinite()) {
    throw Error(ErrorCode::DomainError, "parameters must be finite");
  }
}

void require_categories(const Dataset& data) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(data.q) + 1, 0);
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.s[i] == 1) ++counts[static_cast<std::size_t>(data.y[i])];
  }
  for (int k = 1; k < data.q; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) {
      throw Error(ErrorCode::NonIdentified,
                  "category " + std::to_string(k) + " has no selected observations", k);
    }
  }
}

}  // namespace

double category_index(const Vector& x, const std::vector<Vector>& beta, int k) {
  const int m1 = static_cast<int>(beta.size());
  if (k < 1 || k > m1) throw Error(ErrorCode::DomainError, "category index must be in 1..q-1");
  RowWork w(m1 + 1);
  for (int j = 0; j < m1; ++j) w.eta[j] = x.dot(beta[static_cast<std::size_t>(j)]);
  index_for(w, m1, k - 1);
  return w.u[k - 1];
}

double selected_loglik(const Dataset& data, const Vector& theta, const Vector& delta,
                       const EstimatorConfig& cfg) {
  check_shapes(data, theta, delta);
  const auto t = evaluate(data, theta, delta, cfg, false);
  if (t.bad_row != kNoRow) throw NonFiniteLik(t.bad_row);
  return t.loglik;
}

Vector score_theta(const Dataset& data, const Vector& theta, const Vector& delta,
                   const EstimatorConfig& cfg) {
  check_shapes(data, theta, delta);
  auto t = evaluate(data, theta, delta, cfg, true);
  if (t.bad_row != kNoRow) throw NonFiniteLik(t.bad_row);
  return t.grad;
}

Matrix score_rows(const Dataset& data, const Vector& theta, const Vector& delta,
                  const EstimatorConfig& cfg) {
  check_shapes(data, theta, delta);
  return per_row_scores(data, theta, delta, cfg, ScoreKind::Full);
}

Matrix literal_score_rows(const Dataset& data, const Vector& theta, const Vector& delta) {
  check_shapes(data, theta, delta);
  return per_row_scores(data, theta, delta, EstimatorConfig{}, ScoreKind::Literal);
}

std::size_t count_saturated_rows(const Dataset& data, const Vector& theta, double threshold) {
  const Layout L{data.q, static_cast<Eigen::Index>(data.dx())};
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (int k = 1; k < data.q; ++k) {
      if (std::abs(data.x.row(i).dot(theta.segment(L.gamma(k), L.dx))) > threshold) {
        ++count;
        break;
      }
    }
  }
  return count;
}

FirstStage first_stage_logit(const Dataset& data, const EstimatorConfig& cfg) {
  data.validate();
  const Matrix w = data.w();
  const auto dw = w.cols();
  Eigen::ColPivHouseholderQR<Matrix> qr(w.rows(), w.cols());
  qr.setThreshold(1e-10);
  qr.compute(w);
  if (qr.rank() < dw) {
    throw Error(ErrorCode::RankDeficient,
                "selection covariates W = (X, Z) are not of full column rank");
  }
  Vector s(w.rows());
  Vector wt(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    s[i] = data.s[static_cast<std::size_t>(i)];
    wt[i] = data.row_weight(static_cast<std::size_t>(i));
  }
  auto fitted = [&](const Vector& d) {
    Vector eta = w * d;
    return eta.unaryExpr([](double e) { return kernel::logistic(e); }).eval();
  };
  Objective obj;
  obj.value = [&](const Vector& d) {
    const Vector eta = w * d;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      ll += wt[i] * (s[i] == 1.0 ? kernel::log_logistic(eta[i]) : kernel::log_logistic(-eta[i]));
    }
    return ll;
  };
  obj.gradient = [&](const Vector& d) {
    return (w.transpose() * (wt.cwiseProduct(s - fitted(d)))).eval();
  };
  obj.hessian = [&](const Vector& d) {
    const Vector p = fitted(d);
    const Vector h = wt.cwiseProduct(p.cwiseProduct((1.0 - p.array()).matrix()));
    return (-(w.transpose() * h.asDiagonal() * w)).eval();
  };
  NewtonOptions opts;
  opts.tol = cfg.tol;
  opts.max_iter = cfg.max_iter;
  opts.divergence_norm = 1e3;
  const auto res = newton_maximize(obj, Vector::Zero(dw), opts);

  const Vector p = fitted(res.x);
  const double worst = (s - p).cwiseAbs().maxCoeff();
  if (res.diverged || worst < 1e-6) {
    throw Error(ErrorCode::SeparationDetected,
                "selection is perfectly predicted by W; the logit estimate diverges");
  }
  if (!res.converged) {
    throw NoConvergence("first-stage logit did not converge",
                        std::vector<double>(res.x.data(), res.x.data() + res.x.size()),
                        res.gradient_norm, res.iterations);
  }
  FirstStage out;
  out.delta = res.x;
  out.loglik = res.value;
  out.iterations = res.iterations;
  out.gradient_norm = res.gradient_norm;
  const Matrix info = -obj.hessian(res.x);
  const Matrix cov = solve_spd(SymMatrix::symmetrized(info), Matrix(Matrix::Identity(dw, dw)));
  out.std_errors = cov.diagonal().cwiseSqrt();
  return out;
}

MultinomialLogit selected_sample_mnl(const Dataset& data, const EstimatorConfig& cfg) {
  const int m1 = data.q - 1;
  const auto dx = static_cast<Eigen::Index>(data.dx());
  const Eigen::Index dim = m1 * dx;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.n(); ++i) {
    if (data.s[i] == 1) rows.push_back(i);
  }
  auto probs = [&](const Vector& b, Eigen::Index r, Vector& pr) {
    double m = 0.0;
    for (int k = 0; k < m1; ++k) m = std::max(m, data.x.row(r).dot(b.segment(k * dx, dx)));
    double tot = std::exp(-m);
    for (int k = 0; k < m1; ++k) {
      pr[k] = std::exp(data.x.row(r).dot(b.segment(k * dx, dx)) - m);
      tot += pr[k];
    }
    pr /= tot;
    return std::log(tot) + m;  // log sum_j e^{eta_j}
  };
  Objective obj;
  obj.value = [&](const Vector& b) {
    Vector pr(m1);
    double ll = 0.0;
    for (std::size_t i : rows) {
      const auto r = static_cast<Eigen::Index>(i);
      const double lse = probs(b, r, pr);
      const int y = data.y[i];
      const double eta = y < data.q ? data.x.row(r).dot(b.segment((y - 1) * dx, dx)) : 0.0;
      ll += data.row_weight(i) * (eta - lse);
    }
    return ll;
  };
  obj.gradient = [&](const Vector& b) {
    Vector g = Vector::Zero(dim);
    Vector pr(m1);
    for (std::size_t i : rows) {
      const auto r = static_cast<Eigen::Index>(i);
      probs(b, r, pr);
      for (int k = 0; k < m1; ++k) {
        const double resid = (data.y[i] == k + 1 ? 1.0 : 0.0) - pr[k];
        g.segment(k * dx, dx) += data.row_weight(i) * resid * data.x.row(r).transpose();
      }
    }
    return g;
  };
  obj.hessian = [&](const Vector& b) {
    Matrix h = Matrix::Zero(dim, dim);
    Vector pr(m1);
    for (std::size_t i : rows) {
      const auto r = static_cast<Eigen::Index>(i);
      probs(b, r, pr);
      const Matrix xx = data.x.row(r).transpose() * data.x.row(r);
      for (int k = 0; k < m1; ++k) {
        for (int l = 0; l < m1; ++l) {
          const double c = pr[k] * ((k == l ? 1.0 : 0.0) - pr[l]);
          h.block(k * dx, l * dx, dx, dx) -= data.row_weight(i) * c * xx;
        }
      }
    }
    return h;
  };
  NewtonOptions opts;
  opts.tol = cfg.tol;
  opts.max_iter = cfg.max_iter;
  opts.step_cap = cfg.step_cap;
  const auto res = newton_maximize(obj, Vector::Zero(dim), opts);
  MultinomialLogit out;
  out.converged = res.converged;
  for (int k = 0; k < m1; ++k) out.beta.push_back(res.x.segment(k * dx, dx));
  try {
    const Matrix info = -obj.hessian(res.x);
    const Matrix cov = solve_spd(SymMatrix::symmetrized(info), Matrix(Matrix::Identity(dim, dim)));
    out.std_errors = cov.diagonal().cwiseSqrt();
  } catch (const Error&) {
    out.std_errors = Vector::Constant(dim, std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

SecondStage second_stage_fit(const Dataset& data, const Vector& delta,
                             const std::optional<Vector>& init, const EstimatorConfig& cfg) {
  data.validate();
  require_categories(data);
  const Layout L{data.q, static_cast<Eigen::Index>(data.dx())};
  Vector theta0;
  if (init) {
    theta0 = *init;
  } else {
    theta0 = Vector::Zero(L.dim());
    const auto mnl = selected_sample_mnl(data, cfg);
    for (int k = 1; k < data.q; ++k) {
      theta0.segment(L.beta(k), L.dx) = mnl.beta[static_cast<std::size_t>(k - 1)];
    }
  }
  check_shapes(data, theta0, delta);

  Objective obj;
  obj.value = [&](const Vector& t) {
    const auto r = evaluate(data, t, delta, cfg, false);
    return r.bad_row == kNoRow ? r.loglik : -std::numeric_limits<double>::infinity();
  };
  obj.gradient = [&](const Vector& t) { return evaluate(data, t, delta, cfg, true).grad; };
  NewtonOptions opts;
  opts.tol = cfg.tol;
  opts.max_iter = cfg.max_iter;
  opts.step_cap = cfg.step_cap;
  opts.hessian_step = cfg.hessian_step;
  const auto res = newton_maximize(obj, theta0, opts);
  if (!res.converged) {
    throw NoConvergence("second stage did not reach the gradient tolerance",
                        std::vector<double>(res.x.data(), res.x.data() + res.x.size()),
                        res.gradient_norm, res.iterations);
  }
  return {res.x, res.value, res.gradient_norm, res.iterations, res.gradient_fallbacks};
}

SandwichVariance sandwich_variance(const Dataset& data, const Vector& theta_hat,
                                   const Vector& delta_hat, const EstimatorConfig& cfg) {
  check_shapes(data, theta_hat, delta_hat);
  double n = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) n += data.row_weight(i);
  const Matrix w = data.w();
  const auto dw = w.cols();
  const auto p = theta_hat.size();

  SandwichVariance out;
  // A = -(1/n) d^2 L2 / d theta d theta', by central differences of the score.
  auto grad = [&](const Vector& t) { return score_theta(data, t, delta_hat, cfg); };
  out.a = SymMatrix::symmetrized(-fd_jacobian(grad, theta_hat, cfg.hessian_step) / n);

  Matrix sd(w.rows(), dw);
  Matrix dmat = Matrix::Zero(dw, dw);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double pr = kernel::logistic(w.row(i).dot(delta_hat));
    const double wt = data.row_weight(static_cast<std::size_t>(i));
    sd.row(i) = wt * (data.s[static_cast<std::size_t>(i)] - pr) * w.row(i);
    dmat.noalias() += wt * pr * (1.0 - pr) * w.row(i).transpose() * w.row(i);
  }
  out.d = SymMatrix::symmetrized(dmat / n);

  out.cond_a = out.a.condition_number();
  out.cond_d = out.d.condition_number();
  if (out.a.min_eigenvalue() <= 0.0 || out.cond_a > cfg.max_condition) {
    throw Error(ErrorCode::SingularInformation,
                "second-stage information A is singular or not positive definite (condition " +
                    std::to_string(out.cond_a) + ")");
  }
  if (out.d.min_eigenvalue() <= 0.0 || out.cond_d > cfg.max_condition) {
    throw Error(ErrorCode::SingularInformation,
                "first-stage information D is singular (condition " + std::to_string(out.cond_d) + ")");
  }

  const Matrix st = cfg.literal_scores ? literal_score_rows(data, theta_hat, delta_hat)
                                       : score_rows(data, theta_hat, delta_hat, cfg);
  // Scores carry the row weight once; outer products must carry it once too.
  Vector inv_w(w.rows());
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double wt = data.row_weight(static_cast<std::size_t>(i));
    inv_w[i] = wt > 0.0 ? 1.0 / wt : 0.0;
  }
  const Matrix s_tt = st.transpose() * inv_w.asDiagonal() * st / n;
  const Matrix s_td = st.transpose() * inv_w.asDiagonal() * sd / n;

  const Matrix a_inv = solve_spd(out.a, Matrix(Matrix::Identity(p, p)));
  const Matrix d_inv_s_dt = solve_spd(out.d, Matrix(s_td.transpose()));
  out.vtheta = SymMatrix::symmetrized(a_inv * (s_tt + s_td * d_inv_s_dt) * a_inv);
  out.vtheta_known_delta = SymMatrix::symmetrized(a_inv * s_tt * a_inv);

  // G = (1/n) d score / d delta'
  auto score_in_delta = [&](const Vector& d) { return score_theta(data, theta_hat, d, cfg); };
  const Matrix g = fd_jacobian(score_in_delta, delta_hat, cfg.hessian_step) / n;
  const Matrix psi = st + sd * solve_spd(out.d, Matrix(g.transpose()));
  out.vtheta_influence =
      SymMatrix::symmetrized(a_inv * (psi.transpose() * inv_w.asDiagonal() * psi / n) * a_inv);

  out.std_errors = (out.vtheta.dense().diagonal() / n).cwiseMax(0.0).cwiseSqrt();
  out.std_errors_influence = (out.vtheta_influence.dense().diagonal() / n).cwiseMax(0.0).cwiseSqrt();
  return out;
}

FitResult estimate_two_step(const Dataset& data, const EstimatorConfig& cfg) {
  data.validate();
  require_categories(data);
  FitResult fit;
  fit.n = data.n();
  fit.first_stage = first_stage_logit(data, cfg);
  const Vector& delta = fit.first_stage.delta;

  const auto dz = fit.first_stage.delta.size() - 1;
  fit.diagnostics.instrument_t = delta[dz] / fit.first_stage.std_errors[dz];
  if (std::abs(fit.diagnostics.instrument_t) < 2.0) {
    fit.diagnostics.weak_instrument = true;
    fit.diagnostics.warnings.push_back("WeakInstrument: |t| of the instrument coefficient is " +
                                       std::to_string(std::abs(fit.diagnostics.instrument_t)));
  }

  Vector theta;
  try {
    const auto ss = second_stage_fit(data, delta, std::nullopt, cfg);
    theta = ss.theta;
    fit.converged = true;
    fit.iterations = ss.iterations;
    fit.diagnostics.gradient_norm = ss.gradient_norm;
    fit.diagnostics.gradient_fallbacks = ss.gradient_fallbacks;
  } catch (const NoConvergence& e) {
    theta = Eigen::Map<const Vector>(e.best_iterate.data(),
                                     static_cast<Eigen::Index>(e.best_iterate.size()));
    fit.iterations = e.iterations;
    fit.diagnostics.gradient_norm = e.gradient_norm;
    fit.diagnostics.warnings.push_back(std::string("NoConvergence: ") + e.what());
  }
  fit.params = ModelParams::from_theta(theta, data.q, data.dx(), delta);
  fit.loglik = selected_loglik(data, theta, delta, cfg);
  fit.diagnostics.saturated_rows = count_saturated_rows(data, theta, cfg.saturation_threshold);
  if (fit.diagnostics.saturated_rows > 0) {
    fit.diagnostics.warnings.push_back("tanh saturation in " +
                                       std::to_string(fit.diagnostics.saturated_rows) + " rows");
  }

  try {
    auto var = sandwich_variance(data, theta, delta, cfg);
    fit.vtheta = std::move(var.vtheta);
    fit.vtheta_influence = std::move(var.vtheta_influence);
    fit.std_errors = std::move(var.std_errors);
    fit.std_errors_influence = std::move(var.std_errors_influence);
    fit.diagnostics.cond_a = var.cond_a;
    fit.diagnostics.cond_d = var.cond_d;
    fit.variance_available = true;
  } catch (const Error& e) {
    fit.diagnostics.warnings.push_back(std::string(e.name()) + ": " + e.what());
  }
  return fit;
}

}  // namespace catsel
