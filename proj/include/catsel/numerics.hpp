#pragma once

#include <cstddef>
#include <functional>
#include <optional>

#include <Eigen/Dense>

namespace catsel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dense symmetric matrix. Only the lower triangle of the source is read;
/// the stored matrix is symmetric by construction.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t dim);
  /// Throws DomainError on non-square or non-finite input.
  static SymMatrix from_lower(const Matrix& m);
  /// (m + m') / 2.
  static SymMatrix symmetrized(const Matrix& m);

  std::size_t dim() const noexcept { return static_cast<std::size_t>(m_.rows()); }
  double operator()(std::size_t i, std::size_t j) const { return m_(i, j); }
  const Matrix& dense() const noexcept { return m_; }

  /// Ratio of the largest to the smallest absolute eigenvalue; infinity when singular.
  double condition_number() const;
  /// Smallest eigenvalue.
  double min_eigenvalue() const;

 private:
  Matrix m_;
};

/// Lower Cholesky factor; throws NotPositiveDefinite with the failing pivot.
Matrix cholesky_lower(const SymMatrix& m);

/// Solves m x = rhs through a Cholesky factorization.
Vector solve_spd(const SymMatrix& m, const Vector& rhs);
/// Column-wise solve_spd.
Matrix solve_spd(const SymMatrix& m, const Matrix& rhs);

struct Objective {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  /// Optional analytic Hessian; central differences of `gradient` otherwise.
  std::function<Matrix(const Vector&)> hessian;
};

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double armijo_c = 1e-4;
  int max_backtracks = 60;
  /// Per-coordinate cap on the step length; non-positive disables the cap.
  double step_cap = 0.0;
  double hessian_step = 1e-5;
  /// Optional hard stop: the solver returns once |x|_inf exceeds this.
  double divergence_norm = 0.0;
};

struct NewtonResult {
  Vector x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  int gradient_fallbacks = 0;
  int diagonal_loadings = 0;
};

/// Maximizes `f` by damped Newton steps with Armijo backtracking. When the
/// negated Hessian is not positive definite, a multiple of the identity is
/// added until it factorizes; if even that fails, the step is the scaled
/// gradient. Never throws on non-convergence: the best iterate is returned
/// with `converged == false`.
NewtonResult newton_maximize(const Objective& f, const Vector& x0,
                             const NewtonOptions& opts = {});

/// Root of f on [lo, hi]; throws NoBracket when f(lo) and f(hi) share a sign.
double bisect(const std::function<double(double)>& f, double lo, double hi,
              double tol = 1e-13, int max_iter = 400);

/// Central differences with step `step * max(1, |x_i|)`.
Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                   double step = 1e-6);

/// Central-difference Jacobian of a vector map; column j is d g / d x_j.
Matrix fd_jacobian(const std::function<Vector(const Vector&)>& g, const Vector& x,
                   double step = 1e-5);

}  // namespace catsel
