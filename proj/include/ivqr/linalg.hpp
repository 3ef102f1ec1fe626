#pragma once

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "errors.hpp"

namespace ivqr {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

namespace linalg {

/// Reciprocal 2-norm condition number estimate of a symmetric matrix
/// (ratio of smallest to largest absolute eigenvalue).
inline double rcond_symmetric(const Matrix& a)
{
  if (a.size() == 0)
    return 1.0;
  if (!a.allFinite())
    return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues().cwiseAbs();
  const double hi = ev.maxCoeff();
  if (hi <= 0.0)
    return 0.0;
  return ev.minCoeff() / hi;
}

/// Inverse of a symmetric positive (semi)definite matrix; throws
/// SingularityError when the reciprocal condition number drops below `tol`.
inline Matrix inverse_spd(const Matrix& a, const std::string& what, double tol = 1e-12)
{
  const Matrix sym = 0.5 * (a + a.transpose());
  const double rc = rcond_symmetric(sym);
  if (!(rc > tol)) {
    const double cond = rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    throw SingularityError(what + ": matrix is numerically singular (condition number " +
                             std::to_string(cond) + ")",
                           cond);
  }
  Matrix inv = sym.ldlt().solve(Matrix::Identity(sym.rows(), sym.cols()));
  return 0.5 * (inv + inv.transpose());
}

/// Inverse with a ridge of `ridge_rel * trace / r` added when the matrix is
/// close to singular. `regularized` reports whether the ridge was applied.
inline Matrix inverse_ridge(const Matrix& a, bool& regularized, double tol = 1e-10,
                            double ridge_rel = 1e-8)
{
  Matrix sym = 0.5 * (a + a.transpose());
  regularized = false;
  if (rcond_symmetric(sym) <= tol) {
    const double r = static_cast<double>(sym.rows());
    double ridge = ridge_rel * sym.trace() / r;
    if (!(ridge > 0.0))
      ridge = ridge_rel;
    sym.diagonal().array() += ridge;
    regularized = true;
  }
  Matrix inv = sym.ldlt().solve(Matrix::Identity(sym.rows(), sym.cols()));
  return 0.5 * (inv + inv.transpose());
}

inline bool is_symmetric(const Matrix& a, double tol)
{
  if (a.rows() != a.cols())
    return false;
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, a.cwiseAbs().maxCoeff());
}

inline bool is_psd(const Matrix& a, double tol)
{
  if (a.size() == 0)
    return true;
  if (!is_symmetric(a, tol))
    return false;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  return es.eigenvalues().minCoeff() >= -tol * scale;
}

/// Quadratic form v' A v.
inline double quad(const Vector& v, const Matrix& a)
{
  return v.dot(a * v);
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_sd(const Vector& v)
{
  const Index n = v.size();
  if (n < 2)
    return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(n - 1));
}

} // namespace linalg
} // namespace ivqr
