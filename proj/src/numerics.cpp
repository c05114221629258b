#include "catsel/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "catsel/errors.hpp"

namespace catsel {

SymMatrix::SymMatrix(std::size_t dim)
    : m_(Matrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))) {}

SymMatrix SymMatrix::from_lower(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::DomainError, "matrix is not square");
  if (!m.allFinite()) throw Error(ErrorCode::DomainError, "matrix has non-finite entries");
  SymMatrix s;
  s.m_ = m.selfadjointView<Eigen::Lower>();
  return s;
}

SymMatrix SymMatrix::symmetrized(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::DomainError, "matrix is not square");
  return from_lower(0.5 * (m + m.transpose()));
}

double SymMatrix::condition_number() const {
  if (m_.size() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  if (lo == 0.0) return std::numeric_limits<double>::infinity();
  return ev.maxCoeff() / lo;
}

double SymMatrix::min_eigenvalue() const {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix cholesky_lower(const SymMatrix& s) {
  const Matrix& a = s.dense();
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) throw NotPositiveDefinite(static_cast<std::size_t>(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / ljj;
    }
  }
  return l;
}

Matrix solve_spd(const SymMatrix& m, const Matrix& rhs) {
  if (static_cast<std::size_t>(rhs.rows()) != m.dim()) {
    throw Error(ErrorCode::DomainError, "solve_spd: dimension mismatch");
  }
  const Matrix l = cholesky_lower(m);
  const auto tri = l.triangularView<Eigen::Lower>();
  const Matrix y = tri.solve(rhs);
  return tri.transpose().solve(y);
}

Vector solve_spd(const SymMatrix& m, const Vector& rhs) {
  return solve_spd(m, Matrix(rhs));
}

namespace {

Matrix hessian_at(const Objective& f, const Vector& x, double step) {
  if (f.hessian) return f.hessian(x);
  return fd_jacobian(f.gradient, x, step);
}

// Direction d solving (-H + tau I) d = g for the smallest tau that factorizes.
std::optional<Vector> newton_direction(const Matrix& neg_h, const Vector& g,
                                       int& loadings) {
  try {
    return solve_spd(SymMatrix::symmetrized(neg_h), g);
  } catch (const NotPositiveDefinite&) {
  } catch (const Error&) {
    return std::nullopt;
  }
  const double scale = std::max(neg_h.diagonal().cwiseAbs().maxCoeff(), 1.0);
  double tau = 1e-8 * scale;
  const Eigen::Index n = neg_h.rows();
  for (int attempt = 0; attempt < 30; ++attempt, tau *= 10.0) {
    try {
      Matrix loaded = neg_h + tau * Matrix::Identity(n, n);
      auto d = solve_spd(SymMatrix::symmetrized(loaded), g);
      ++loadings;
      return d;
    } catch (const NotPositiveDefinite&) {
    }
  }
  return std::nullopt;
}

// Rounding level of a log-likelihood summed over many rows.
double noise_tolerance(double f) {
  return 1024.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
}

}  // namespace

NewtonResult newton_maximize(const Objective& f, const Vector& x0, const NewtonOptions& opts) {
  NewtonResult res;
  res.x = x0;
  res.value = f.value(x0);
  if (!std::isfinite(res.value)) {
    res.gradient_norm = std::numeric_limits<double>::infinity();
    return res;
  }
  Vector g = f.gradient(res.x);
  res.gradient_norm = g.norm();

  for (int it = 0; it < opts.max_iter; ++it) {
    if (res.gradient_norm <= opts.tol) {
      res.converged = true;
      return res;
    }
    const Matrix neg_h = -hessian_at(f, res.x, opts.hessian_step);
    auto direction = neg_h.allFinite() ? newton_direction(neg_h, g, res.diagonal_loadings)
                                       : std::nullopt;
    bool gradient_step = false;
    if (!direction || !direction->allFinite() || direction->dot(g) <= 0.0) {
      direction = g / std::max(1.0, g.norm());
      gradient_step = true;
      ++res.gradient_fallbacks;
    }

    bool accepted = false;
    for (int pass = 0; pass < 2 && !accepted; ++pass) {
      Vector d = *direction;
      if (opts.step_cap > 0.0) {
        const double big = d.cwiseAbs().maxCoeff();
        if (big > opts.step_cap) d *= opts.step_cap / big;
      }
      const double slope = g.dot(d);
      double t = 1.0;
      for (int bt = 0; bt < opts.max_backtracks; ++bt, t *= 0.5) {
        const Vector xn = res.x + t * d;
        const double fn = f.value(xn);
        if (!std::isfinite(fn)) continue;
        bool ok = fn >= res.value + opts.armijo_c * t * slope;
        if (!ok && bt == 0 && !gradient_step &&
            fn >= res.value - noise_tolerance(res.value)) {
          // Near the optimum the predicted gain is below the rounding level
          // of f; a full Newton step is then judged by the gradient instead.
          const Vector gn = f.gradient(xn);
          ok = gn.allFinite() && gn.norm() < res.gradient_norm;
        }
        if (ok) {
          res.x = xn;
          res.value = fn;
          accepted = true;
          break;
        }
      }
      if (!accepted && !gradient_step) {
        direction = g / std::max(1.0, g.norm());
        gradient_step = true;
        ++res.gradient_fallbacks;
      } else {
        break;
      }
    }
    res.iterations = it + 1;
    if (!accepted) break;  // stalled: no ascent step exists at working precision

    g = f.gradient(res.x);
    res.gradient_norm = g.norm();
    if (opts.divergence_norm > 0.0 && res.x.cwiseAbs().maxCoeff() > opts.divergence_norm) {
      res.diverged = true;
      return res;
    }
  }
  res.converged = res.gradient_norm <= opts.tol;
  return res;
}

double bisect(const std::function<double(double)>& f, double lo, double hi, double tol,
              int max_iter) {
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw Error(ErrorCode::NoBracket, "bisect: f(lo) and f(hi) have the same sign");
  }
  for (int i = 0; i < max_iter && (hi - lo) > tol; ++i) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return lo + 0.5 * (hi - lo);
}

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                   double step) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& g, const Vector& x,
                   double step) {
  Matrix jac;
  Vector xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    const Vector gp = g(xp);
    xp[j] = x[j] - h;
    const Vector gm = g(xp);
    xp[j] = x[j];
    if (j == 0) jac.resize(gp.size(), x.size());
    jac.col(j) = (gp - gm) / (2.0 * h);
  }
  return jac;
}

}  // namespace catsel
