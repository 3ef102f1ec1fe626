#pragma once

// Dense two-phase tableau simplex with Bland's rule for
//
//     min c'x   subject to   A x = b,   x >= 0.
//
// Meant for small programs (a few hundred rows) where an exact vertex is wanted.

#include <cmath>
#include <vector>

#include "../linalg.hpp"

namespace ivqr::detail {

struct SimplexResult
{
  Vector x;
  bool feasible = false;
  bool bounded = true;
  int pivots = 0;
};

class Tableau
{
public:
  Tableau(const Matrix& a, const Vector& b)
    : m_(a.rows())
    , n_(a.cols())
    , t_(Matrix::Zero(a.rows() + 1, a.cols() + a.rows() + 1))
    , basis_(static_cast<std::size_t>(a.rows()))
  {
    for (Index i = 0; i < m_; ++i) {
      const double sign = b(i) < 0.0 ? -1.0 : 1.0;
      t_.row(i).head(n_) = sign * a.row(i);
      t_(i, n_ + i) = 1.0;
      t_(i, rhs()) = sign * b(i);
      basis_[static_cast<std::size_t>(i)] = n_ + i;
    }
  }

  Index rhs() const { return n_ + m_; }

  void set_costs(const Vector& cost) // cost over all n + m columns
  {
    t_.row(m_).setZero();
    t_.row(m_).head(n_ + m_) = cost.transpose();
    for (Index i = 0; i < m_; ++i) {
      const double cb = cost(basis_[static_cast<std::size_t>(i)]);
      if (cb != 0.0)
        t_.row(m_) -= cb * t_.row(i);
    }
  }

  void pivot(Index row, Index col)
  {
    t_.row(row) /= t_(row, col);
    for (Index i = 0; i <= m_; ++i)
      if (i != row && t_(i, col) != 0.0)
        t_.row(i) -= t_(i, col) * t_.row(row);
    basis_[static_cast<std::size_t>(row)] = col;
  }

  /// Runs Bland's rule over columns [0, allowed); false when unbounded.
  bool optimize(Index allowed, double tol, int& pivots, int max_pivots)
  {
    while (pivots < max_pivots) {
      Index enter = -1;
      for (Index j = 0; j < allowed; ++j)
        if (t_(m_, j) < -tol) {
          enter = j;
          break;
        }
      if (enter < 0)
        return true;
      Index leave = -1;
      double best = 0.0;
      for (Index i = 0; i < m_; ++i) {
        const double v = t_(i, enter);
        if (v > tol) {
          const double ratio = t_(i, rhs()) / v;
          if (leave < 0 || ratio < best - 1e-14 ||
              (std::abs(ratio - best) <= 1e-14 &&
               basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
            leave = i;
            best = ratio;
          }
        }
      }
      if (leave < 0)
        return false;
      pivot(leave, enter);
      ++pivots;
    }
    throw SolverError("simplex: pivot limit reached", solution());
  }

  double objective() const { return -t_(m_, rhs()); }

  /// Moves artificial columns out of the basis where a real column can replace them.
  void expel_artificials(double tol)
  {
    for (Index i = 0; i < m_; ++i) {
      if (basis_[static_cast<std::size_t>(i)] < n_)
        continue;
      for (Index j = 0; j < n_; ++j)
        if (std::abs(t_(i, j)) > tol) {
          pivot(i, j);
          break;
        }
    }
  }

  Vector solution() const
  {
    Vector x = Vector::Zero(n_);
    for (Index i = 0; i < m_; ++i) {
      const Index b = basis_[static_cast<std::size_t>(i)];
      if (b < n_)
        x(b) = t_(i, rhs());
    }
    return x;
  }

private:
  Index m_, n_;
  Matrix t_;
  std::vector<Index> basis_;
};

inline SimplexResult simplex_min(const Matrix& a, const Vector& b, const Vector& c,
                                 double tol = 1e-10, int max_pivots = 200000)
{
  const Index m = a.rows();
  const Index n = a.cols();
  SimplexResult res;
  Tableau tab(a, b);
  Vector phase1 = Vector::Zero(n + m);
  phase1.tail(m).setOnes();
  tab.set_costs(phase1);
  tab.optimize(n + m, tol, res.pivots, max_pivots);
  if (tab.objective() > tol * std::max(1.0, b.cwiseAbs().sum()))
    return res;
  res.feasible = true;
  tab.expel_artificials(tol);
  Vector phase2 = Vector::Zero(n + m);
  phase2.head(n) = c;
  tab.set_costs(phase2);
  res.bounded = tab.optimize(n, tol, res.pivots, max_pivots);
  res.x = tab.solution();
  return res;
}

} // namespace ivqr::detail
