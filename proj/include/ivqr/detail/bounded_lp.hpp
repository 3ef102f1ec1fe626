#pragma once

// Primal-dual interior point method (Mehrotra predictor-corrector) for linear
// programs with box-constrained variables,
//
//     min c'x   subject to   A x = b,   0 <= x <= u,   A = W',
//
// started from a strictly interior feasible x. This is the dual of the
// quantile regression problem: the multipliers of A x = b are the (negated)
// regression coefficients.

#include <algorithm>
#include <cmath>
#include <limits>

#include "../linalg.hpp"

namespace ivqr::detail {

struct BoundedLpResult
{
  Vector x;
  Vector lam; ///< multipliers of A x = b
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

inline double max_step(const Vector& v, const Vector& dv)
{
  double step = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0)
      step = std::min(step, -v(i) / dv(i));
  return step;
}

inline BoundedLpResult solve_bounded_lp(const Matrix& w, const Vector& c, const Vector& b,
                                        const Vector& u, const Vector& x0, double tol = 1e-11,
                                        int max_iter = 100)
{
  constexpr double shrink = 0.99995;
  const Index n = w.rows();
  const Index p = w.cols();

  BoundedLpResult res;
  Vector x = x0;
  Vector s = u - x;
  const Matrix wtw = w.transpose() * w;
  Eigen::LDLT<Matrix> ls(wtw);
  Vector lam = ls.solve(w.transpose() * c);
  Vector r = c - w * lam;
  for (Index i = 0; i < n; ++i)
    if (r(i) == 0.0)
      r(i) = 0.001;
  Vector z = r.cwiseMax(0.0);
  Vector wv = z - r;

  Vector q(n), rr(n), dx(n), ds(n), dz(n), dwv(n), dlam(p), xi(n), dxdz(n), dsdw(n);
  Matrix aqa(p, p);
  const double scale = std::max(1.0, c.cwiseAbs().sum() / static_cast<double>(std::max<Index>(n, 1)));

  int it = 0, stalled = 0;
  double gap = c.dot(x) - b.dot(lam) + u.dot(wv);
  while (it < max_iter) {
    if (gap <= tol * scale * static_cast<double>(n))
      break;
    ++it;
    // Affine scaling direction.
    q = ((z.array() / x.array()) + (wv.array() / s.array())).inverse();
    rr = z - wv;
    aqa.noalias() = w.transpose() * q.asDiagonal() * w;
    Eigen::LDLT<Matrix> fac(aqa);
    dlam = fac.solve(w.transpose() * (q.array() * rr.array()).matrix());
    dx = (q.array() * ((w * dlam) - rr).array()).matrix();
    ds = -dx;
    dz = (-z.array() * (dx.array() / x.array() + 1.0)).matrix();
    dwv = (-wv.array() * (ds.array() / s.array() + 1.0)).matrix();

    double fp = std::min({ shrink * max_step(x, dx), shrink * max_step(s, ds), 1.0 });
    double fd = std::min({ shrink * max_step(z, dz), shrink * max_step(wv, dwv), 1.0 });

    if (std::min(fp, fd) < 1.0) {
      // Centering-corrector step.
      double mu = z.dot(x) + wv.dot(s);
      const double g = (z + fd * dz).dot(x + fp * dx) + (wv + fd * dwv).dot(s + fp * ds);
      mu = mu * std::pow(g / mu, 3) / (2.0 * static_cast<double>(n));
      dxdz = (dx.array() * dz.array()).matrix();
      dsdw = (ds.array() * dwv.array()).matrix();
      xi = (mu * (x.array().inverse() - s.array().inverse())).matrix();
      const Vector rhs =
        (rr.array() - xi.array() + dxdz.array() / x.array() - dsdw.array() / s.array()).matrix();
      dlam = fac.solve(w.transpose() * (q.array() * rhs.array()).matrix());
      dx = (q.array() * ((w * dlam).array() - rhs.array())).matrix();
      ds = -dx;
      dz = (mu / x.array() - z.array() - (z.array() / x.array()) * dx.array() -
            dxdz.array() / x.array())
             .matrix();
      dwv = (mu / s.array() - wv.array() - (wv.array() / s.array()) * ds.array() -
             dsdw.array() / s.array())
              .matrix();
      fp = std::min({ shrink * max_step(x, dx), shrink * max_step(s, ds), 1.0 });
      fd = std::min({ shrink * max_step(z, dz), shrink * max_step(wv, dwv), 1.0 });
    }

    const Vector xn = x + fp * dx, sn = s + fp * ds, lamn = lam + fd * dlam;
    const Vector zn = z + fd * dz, wvn = wv + fd * dwv;
    const double gn = c.dot(xn) - b.dot(lamn) + u.dot(wvn);
    // Near the optimum the complementarity products underflow and the next
    // step is 0/0; keep the last finite iterate instead.
    if (!std::isfinite(gn) || !lamn.allFinite() || !(xn.array() > 0.0).all() || !(sn.array() > 0.0).all())
      break;
    x = xn;
    s = sn;
    lam = lamn;
    z = zn;
    wv = wvn;
    stalled = gn > 0.999 * gap ? stalled + 1 : 0;
    gap = gn;
    if (stalled >= 5)
      break;
  }
  res.x = x;
  res.lam = lam;
  res.gap = gap;
  res.iterations = it;
  res.converged = std::isfinite(gap) && gap <= tol * scale * static_cast<double>(n) * 1e3;
  return res;
}

} // namespace ivqr::detail
