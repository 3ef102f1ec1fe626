#pragma once

// Linear quantile regression: check loss, exact solver, sandwich covariance
// and the l1-penalised variant used for high-dimensional profiling.
//
// The solver runs an interior point method on the dual linear program and then
// moves to an optimal vertex (a basic solution interpolating dim(W)
// observations) by exact-line-search simplex pivots. In flat optima the vertex
// walk continues along zero-slope edges that decrease the coefficient vector
// lexicographically, so ties resolve to the smallest optimiser.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "detail/bounded_lp.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "linalg.hpp"

namespace ivqr {

inline double check_loss(double u, double tau)
{
  if (!(tau > 0.0 && tau < 1.0))
    throw DomainError("check_loss: tau must lie in (0,1)");
  return u * (tau - (u < 0.0 ? 1.0 : 0.0));
}

/// Mean check loss (1/N) sum rho_tau(y_i - W_i'b).
inline double mean_check_loss(const Vector& y, const Matrix& w, const Vector& coef, double tau)
{
  const Vector r = y - w * coef;
  double total = 0.0;
  for (Index i = 0; i < r.size(); ++i)
    total += r(i) * (tau - (r(i) < 0.0 ? 1.0 : 0.0));
  return total / static_cast<double>(r.size());
}

struct QRFit
{
  Vector coef;
  Matrix cov;                    ///< sandwich covariance of sqrt(N)(coef - truth); empty until computed
  double tau = 0.5;
  double bandwidth = std::nan(""); ///< bandwidth used for cov
  double objective = 0.0;        ///< mean check loss at coef
  bool rank_deficient = false;
  std::vector<Index> basis;      ///< interpolated observations (empty if no vertex was formed)
  int iterations = 0;
};

struct QrOptions
{
  /// Vertex polishing is applied when dim(W) does not exceed this.
  Index polish_max_dim = 20;
  int max_ip_iterations = 100;
};

namespace detail {

struct VertexSolution
{
  Vector coef;
  std::vector<Index> basis;
};

/// Greedy choice of dim(W) linearly independent rows with smallest |r|.
inline std::optional<std::vector<Index>> choose_basis(const Matrix& w, const Vector& r)
{
  const Index n = w.rows();
  const Index p = w.cols();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{ 0 });
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return std::abs(r(a)) < std::abs(r(b)); });
  std::vector<Index> basis;
  Matrix q(p, p);
  Index filled = 0;
  for (Index i : order) {
    if (filled == p)
      break;
    Vector v = w.row(i).transpose();
    const double norm0 = v.norm();
    if (norm0 == 0.0)
      continue;
    for (Index j = 0; j < filled; ++j)
      v -= v.dot(q.col(j)) * q.col(j);
    for (Index j = 0; j < filled; ++j)
      v -= v.dot(q.col(j)) * q.col(j);
    const double nv = v.norm();
    if (nv > 1e-9 * norm0) {
      q.col(filled++) = v / nv;
      basis.push_back(i);
    }
  }
  if (filled < p)
    return std::nullopt;
  return basis;
}

inline bool lex_negative(const Vector& d, double eps)
{
  for (Index i = 0; i < d.size(); ++i) {
    if (d(i) < -eps)
      return true;
    if (d(i) > eps)
      return false;
  }
  return false;
}

/// Simplex-type descent over basic solutions for the (row-weighted,
/// per-observation tau) quantile regression problem, started from `start`.
inline std::optional<VertexSolution> polish_vertex(const Vector& y, const Matrix& w,
                                                   const Vector& tau, const Vector& start,
                                                   int max_pivots)
{
  const Index n = w.rows();
  const Index p = w.cols();
  auto basis_opt = choose_basis(w, y - w * start);
  if (!basis_opt)
    return std::nullopt;
  std::vector<Index> basis = *basis_opt;
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  for (Index b : basis)
    in_basis[static_cast<std::size_t>(b)] = 1;

  Matrix wh(p, p);
  Vector yh(p), coef(p), r(n), g(p), d(p), u(n), e(p);
  std::vector<std::pair<double, Index>> breaks;
  breaks.reserve(static_cast<std::size_t>(n));

  for (int pivot = 0; pivot <= max_pivots; ++pivot) {
    for (Index j = 0; j < p; ++j) {
      wh.row(j) = w.row(basis[static_cast<std::size_t>(j)]);
      yh(j) = y(basis[static_cast<std::size_t>(j)]);
    }
    Eigen::FullPivLU<Matrix> lu(wh);
    if (!lu.isInvertible())
      return std::nullopt;
    coef = lu.solve(yh);
    r.noalias() = y - w * coef;
    Vector v = Vector::Zero(p);
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)]) {
        r(i) = 0.0;
        continue;
      }
      const double psi = tau(i) - (r(i) < 0.0 ? 1.0 : 0.0);
      v.noalias() += psi * w.row(i).transpose();
    }
    // g = Wh^{-T} v ; releasing basic j in direction sigma has slope
    // sigma=+1: 1 - tau_j - g_j ; sigma=-1: tau_j + g_j.
    g = lu.transpose().solve(v);
    const double eps = 1e-10 * (1.0 + g.cwiseAbs().maxCoeff());
    double best = -eps;
    Index leave = -1;
    double sigma = 0.0;
    for (Index j = 0; j < p; ++j) {
      const double tj = tau(basis[static_cast<std::size_t>(j)]);
      const double up = 1.0 - tj - g(j);
      const double down = tj + g(j);
      if (up < best) {
        best = up;
        leave = j;
        sigma = 1.0;
      }
      if (down < best) {
        best = down;
        leave = j;
        sigma = -1.0;
      }
    }
    bool flat_move = false;
    if (leave < 0) {
      // Optimal. Look for a zero-slope edge that lowers coef lexicographically.
      for (Index j = 0; j < p && leave < 0; ++j) {
        const double tj = tau(basis[static_cast<std::size_t>(j)]);
        for (double sg : { 1.0, -1.0 }) {
          const double slope = sg > 0 ? 1.0 - tj - g(j) : tj + g(j);
          if (std::abs(slope) > eps)
            continue;
          e.setZero();
          e(j) = sg;
          d = lu.solve(e);
          if (lex_negative(d, 1e-12 * (1.0 + coef.cwiseAbs().maxCoeff()))) {
            leave = j;
            sigma = sg;
            best = slope;
            flat_move = true;
            break;
          }
        }
      }
      if (leave < 0)
        return VertexSolution{ coef, basis };
    }
    e.setZero();
    e(leave) = sigma;
    d = lu.solve(e);
    u.noalias() = w * d;
    breaks.clear();
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)] || u(i) == 0.0)
        continue;
      if ((r(i) >= 0.0 && u(i) > 0.0) || (r(i) < 0.0 && u(i) < 0.0))
        breaks.emplace_back(r(i) / u(i), i);
    }
    if (breaks.empty())
      return VertexSolution{ coef, basis };
    std::sort(breaks.begin(), breaks.end());
    double slope = best;
    Index enter = -1;
    double t_star = 0.0;
    for (const auto& [t, i] : breaks) {
      slope += std::abs(u(i));
      if (flat_move || slope >= 0.0) {
        enter = i;
        t_star = t;
        break;
      }
    }
    if (enter < 0)
      return VertexSolution{ coef, basis };
    if (flat_move && !(t_star > 0.0))
      return VertexSolution{ coef, basis };
    in_basis[static_cast<std::size_t>(basis[static_cast<std::size_t>(leave)])] = 0;
    basis[static_cast<std::size_t>(leave)] = enter;
    in_basis[static_cast<std::size_t>(enter)] = 1;
  }
  return VertexSolution{ coef, basis };
}

inline double weighted_check_sum(const Vector& y, const Matrix& w, const Vector& tau,
                                 const Vector& coef)
{
  const Vector r = y - w * coef;
  double total = 0.0;
  for (Index i = 0; i < r.size(); ++i)
    total += r(i) * (tau(i) - (r(i) < 0.0 ? 1.0 : 0.0));
  return total;
}

struct QrSolve
{
  Vector coef;
  std::vector<Index> basis;
  int iterations = 0;
};

/// min sum_i rho_{tau_i}(y_i - W_i'b) for full-column-rank W.
inline QrSolve solve_qr(const Vector& y, const Matrix& w, const Vector& tau,
                        const QrOptions& opt)
{
  const Index n = w.rows();
  const Index p = w.cols();
  const Vector one_minus_tau = (1.0 - tau.array()).matrix();
  const Vector b = w.transpose() * one_minus_tau;
  const Vector c = -y;
  const Vector u = Vector::Ones(n);
  const BoundedLpResult lp = solve_bounded_lp(w, c, b, u, one_minus_tau, 1e-11, opt.max_ip_iterations);
  Vector coef = -lp.lam;
  QrSolve out;
  out.iterations = lp.iterations;
  if (!coef.allFinite()) {
    throw SolverError("quantile regression interior point method diverged", coef, lp.gap);
  }
  if (p <= opt.polish_max_dim) {
    auto vert = polish_vertex(y, w, tau, coef, static_cast<int>(10 * n + 100));
    if (vert) {
      const double f_ip = weighted_check_sum(y, w, tau, coef);
      const double f_v = weighted_check_sum(y, w, tau, vert->coef);
      if (f_v <= f_ip + 1e-12 * std::max(1.0, std::abs(f_ip))) {
        out.coef = vert->coef;
        out.basis = vert->basis;
        return out;
      }
    }
  }
  if (!lp.converged)
    throw SolverError("quantile regression did not converge (duality gap " +
                        std::to_string(lp.gap) + ")",
                      coef, lp.gap);
  out.coef = coef;
  return out;
}

} // namespace detail

/// Quantile regression of y on the columns of W at level tau.
inline QRFit fit_qr(const Vector& y, const Matrix& w, double tau, const QrOptions& opt = {})
{
  if (!(tau > 0.0 && tau < 1.0))
    throw DomainError("fit_qr: tau must lie in (0,1)");
  if (y.size() == 0 || w.rows() == 0)
    throw DomainError("fit_qr: empty data");
  if (w.rows() != y.size())
    throw DomainError("fit_qr: design rows do not match outcome length");
  const Index n = w.rows();
  const Index p = w.cols();
  QRFit fit;
  fit.tau = tau;
  fit.coef = Vector::Zero(p);
  if (p == 0) {
    fit.objective = mean_check_loss(y, w, fit.coef, tau);
    return fit;
  }
  Eigen::ColPivHouseholderQR<Matrix> rank_qr(w);
  rank_qr.setThreshold(1e-10);
  const Index rank = rank_qr.rank();
  std::vector<Index> cols;
  if (rank < p) {
    fit.rank_deficient = true;
    // Keep the leading pivot columns, restored to their original order.
    for (Index j = 0; j < rank; ++j)
      cols.push_back(rank_qr.colsPermutation().indices()(j));
    std::sort(cols.begin(), cols.end());
  } else {
    cols.resize(static_cast<std::size_t>(p));
    std::iota(cols.begin(), cols.end(), Index{ 0 });
  }
  if (cols.empty()) {
    fit.objective = mean_check_loss(y, w, fit.coef, tau);
    return fit;
  }
  Matrix wsub(n, static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    wsub.col(static_cast<Index>(j)) = w.col(cols[j]);
  const detail::QrSolve sol = detail::solve_qr(y, wsub, Vector::Constant(n, tau), opt);
  for (std::size_t j = 0; j < cols.size(); ++j)
    fit.coef(cols[j]) = sol.coef(static_cast<Index>(j));
  fit.basis = sol.basis;
  fit.iterations = sol.iterations;
  fit.objective = mean_check_loss(y, w, fit.coef, tau);
  return fit;
}

/// Kernel sandwich covariance of sqrt(N)(coef - truth):
/// tau(1-tau) J^{-1} (W'W/N) J^{-1}, J = (1/(N h)) sum_i W_i W_i' K(r_i/h).
/// Observations interpolated by the basic solution (residual identically zero)
/// carry no density information and are left out of J.
inline Matrix qr_covariance(const QRFit& fit, const Vector& y, const Matrix& w, double tau,
                            double h)
{
  if (!(h > 0.0))
    throw DomainError("qr_covariance: bandwidth must be positive");
  const Index n = w.rows();
  const Index p = w.cols();
  Vector r = y - w * fit.coef;
  Vector kw = kernel::weights(r, h);
  for (Index b : fit.basis)
    kw(b) = 0.0;
  const Matrix jm = (w.transpose() * kw.asDiagonal() * w) / (static_cast<double>(n) * h);
  const Matrix hm = (w.transpose() * w) / static_cast<double>(n);
  const double rc = linalg::rcond_symmetric(jm);
  if (!(rc > 1e-10) || !jm.allFinite()) {
    const double cond = rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    throw SingularityError("qr_covariance: kernel Hessian is near-singular (condition number " +
                             std::to_string(cond) + ")",
                           cond);
  }
  const Matrix jinv = jm.ldlt().solve(Matrix::Identity(p, p));
  Matrix cov = tau * (1.0 - tau) * jinv * hm * jinv;
  return 0.5 * (cov + cov.transpose());
}

/// fit_qr followed by qr_covariance with the default residual bandwidth
/// (or `h` when positive).
inline QRFit fit_qr_with_cov(const Vector& y, const Matrix& w, double tau, double h = 0.0,
                             const QrOptions& opt = {})
{
  QRFit fit = fit_qr(y, w, tau, opt);
  const Vector r = y - w * fit.coef;
  fit.bandwidth = h > 0.0 ? h : kernel::residual_bandwidth(r);
  fit.cov = qr_covariance(fit, y, w, tau, fit.bandwidth);
  return fit;
}

/// Objective of the l1-penalised problem.
inline double l1_qr_objective(const Vector& y, const Matrix& w, double tau, double lambda,
                              const Vector& psi, const Vector& coef)
{
  return mean_check_loss(y, w, coef, tau) + lambda * (psi.array() * coef.array().abs()).sum();
}

/// l1-penalised quantile regression
///   min (1/N) sum rho_tau(y_i - W_i'b) + lambda sum_j psi_j |b_j|.
/// Columns with psi_j = 0 are unpenalised. Solved exactly as a quantile
/// regression on an augmented design with one pseudo-observation per
/// penalised coefficient.
inline Vector fit_qr_l1(const Vector& y, const Matrix& w, double tau, double lambda,
                        const Vector& psi, const QrOptions& opt = {})
{
  if (!(tau > 0.0 && tau < 1.0))
    throw DomainError("fit_qr_l1: tau must lie in (0,1)");
  if (!(lambda >= 0.0))
    throw DomainError("fit_qr_l1: lambda must be nonnegative");
  if (psi.size() != w.cols() || (psi.array() < 0.0).any())
    throw DomainError("fit_qr_l1: penalty loadings must be nonnegative, one per column");
  if (y.size() == 0 || w.rows() != y.size())
    throw DomainError("fit_qr_l1: empty or mismatched data");
  const Index n = w.rows();
  const Index p = w.cols();
  std::vector<Index> pen;
  for (Index j = 0; j < p; ++j)
    if (psi(j) > 0.0 && lambda > 0.0)
      pen.push_back(j);
  if (pen.empty())
    return fit_qr(y, w, tau, opt).coef;

  // Exact zero solution when the subgradient condition holds at b = 0.
  if (static_cast<Index>(pen.size()) == p && (y.array() != 0.0).all()) {
    Vector grad = Vector::Zero(p);
    for (Index i = 0; i < n; ++i)
      grad += (tau - (y(i) < 0.0 ? 1.0 : 0.0)) * w.row(i).transpose();
    grad /= static_cast<double>(n);
    if ((grad.array().abs() <= lambda * psi.array()).all())
      return Vector::Zero(p);
  }

  const Index extra = static_cast<Index>(pen.size());
  Matrix wa(n + extra, p);
  Vector ya(n + extra);
  Vector ta(n + extra);
  wa.topRows(n) = w;
  ya.head(n) = y;
  ta.head(n).setConstant(tau);
  wa.bottomRows(extra).setZero();
  ya.tail(extra).setZero();
  ta.tail(extra).setConstant(0.5);
  for (Index e = 0; e < extra; ++e) {
    const Index j = pen[static_cast<std::size_t>(e)];
    wa(n + e, j) = 2.0 * static_cast<double>(n) * lambda * psi(j);
  }
  Eigen::ColPivHouseholderQR<Matrix> rank_qr(wa);
  rank_qr.setThreshold(1e-10);
  if (rank_qr.rank() < p)
    throw SolverError("fit_qr_l1: unpenalised block is rank deficient", Vector::Zero(p));
  return detail::solve_qr(ya, wa, ta, opt).coef;
}

} // namespace ivqr
