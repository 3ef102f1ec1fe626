#pragma once

// GMM with quantile moment conditions
//   g(V, theta) = (tau - 1{Y - D'alpha - X'beta <= 0}) Psi,
// the default weighting matrix, the smoothed variant and minimisation over a
// parameter box.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "detail/parallel.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "quantreg.hpp"

namespace ivqr {

/// Residuals Y - D alpha - X beta for theta = (alpha, beta).
inline Vector residuals(const Dataset& ds, const Vector& theta)
{
  if (theta.size() != ds.s() + ds.k())
    throw DomainError("theta has dimension " + std::to_string(theta.size()) + ", expected " +
                      std::to_string(ds.s() + ds.k()));
  return ds.y() - ds.d() * theta.head(ds.s()) - ds.x() * theta.tail(ds.k());
}

/// Regressor matrix [D, X] matching theta = (alpha, beta).
inline Matrix regressors(const Dataset& ds)
{
  Matrix w(ds.n(), ds.s() + ds.k());
  w << ds.d(), ds.x();
  return w;
}

/// Single-observation moment from its residual and instrument vector.
inline Vector moment_vector(double residual, double tau, const Vector& psi)
{
  return (tau - (residual <= 0.0 ? 1.0 : 0.0)) * psi;
}

/// Moment of observation i of a dataset.
inline Vector moment_vector(const Dataset& ds, Index i, const Vector& theta, double tau,
                            InstrumentRule rule = InstrumentRule::stacked_zx)
{
  const double e = ds.y()(i) - ds.d().row(i).dot(theta.head(ds.s())) -
                   ds.x().row(i).dot(theta.tail(ds.k()));
  Vector psi(instrument_dim(ds, rule));
  if (rule == InstrumentRule::z_only)
    psi = ds.z().row(i).transpose();
  else
    psi << ds.z().row(i).transpose(), ds.x().row(i).transpose();
  return moment_vector(e, tau, psi);
}

inline Vector sample_moments_psi(const Matrix& psi, const Vector& resid, double tau)
{
  const Vector w = resid.unaryExpr([tau](double e) { return tau - (e <= 0.0 ? 1.0 : 0.0); });
  return psi.transpose() * w / static_cast<double>(psi.rows());
}

inline Vector sample_moments(const Dataset& ds, const Vector& theta, double tau,
                             InstrumentRule rule = InstrumentRule::stacked_zx)
{
  return sample_moments_psi(instruments(ds, rule), residuals(ds, theta), tau);
}

/// G_h(u) = P[h V >= u] for V standard normal.
inline double survival_kernel(double u, double h)
{
  return kernel::survival(u, h);
}

inline Vector smoothed_moments_psi(const Matrix& psi, const Vector& resid, double tau, double h)
{
  if (!(h > 0.0))
    throw DomainError("smoothing bandwidth must be positive");
  const Vector w = resid.unaryExpr([tau, h](double e) { return tau - kernel::survival(e, h); });
  return psi.transpose() * w / static_cast<double>(psi.rows());
}

inline Vector smoothed_sample_moments(const Dataset& ds, const Vector& theta, double tau, double h,
                                      InstrumentRule rule = InstrumentRule::stacked_zx)
{
  return smoothed_moments_psi(instruments(ds, rule), residuals(ds, theta), tau, h);
}

/// d/dtheta of the smoothed sample moments: -(1/(N h)) sum K(e_i/h) Psi_i [D_i, X_i]'.
inline Matrix smoothed_moments_jacobian(const Dataset& ds, const Vector& theta, double tau,
                                        double h, InstrumentRule rule = InstrumentRule::stacked_zx)
{
  (void)tau;
  if (!(h > 0.0))
    throw DomainError("smoothing bandwidth must be positive");
  const Vector kw = kernel::weights(residuals(ds, theta), h);
  const Matrix psi = instruments(ds, rule);
  return -(psi.transpose() * kw.asDiagonal() * regressors(ds)) /
         (static_cast<double>(ds.n()) * h);
}

/// Omega = (tau (1-tau) (1/N) sum Psi Psi')^{-1}.
inline Matrix default_weight_psi(const Matrix& psi, double tau)
{
  check_tau(tau);
  const Matrix s = tau * (1.0 - tau) * (psi.transpose() * psi) / static_cast<double>(psi.rows());
  Eigen::ColPivHouseholderQR<Matrix> qr(psi);
  qr.setThreshold(1e-10);
  if (qr.rank() < psi.cols()) {
    std::string cols;
    for (Index j = qr.rank(); j < psi.cols(); ++j)
      cols += (cols.empty() ? "" : ",") + std::to_string(qr.colsPermutation().indices()(j));
    throw SingularityError("instrument second-moment matrix is singular; dependent column(s): " +
                             cols,
                           std::numeric_limits<double>::infinity());
  }
  return linalg::inverse_spd(s, "instrument second-moment matrix");
}

inline Matrix default_weight(const Dataset& ds, double tau,
                             InstrumentRule rule = InstrumentRule::stacked_zx)
{
  return default_weight_psi(instruments(ds, rule), tau);
}

/// Default smoothing bandwidth: rule of thumb on the residuals of a
/// conventional quantile regression of Y on [D, X].
inline double default_smoothing_bandwidth(const Dataset& ds, double tau)
{
  const Matrix w = regressors(ds);
  const QRFit pilot = fit_qr(ds.y(), w, tau);
  return kernel::residual_bandwidth(ds.y() - w * pilot.coef);
}

/// m_N(theta) = N g_N(theta)' Omega g_N(theta), smoothed when a bandwidth is set.
class GmmObjective
{
public:
  GmmObjective(const Dataset& ds, double tau, InstrumentRule rule = InstrumentRule::stacked_zx,
               std::optional<Matrix> weight = std::nullopt, std::optional<double> h = std::nullopt)
    : ds_(&ds)
    , tau_(tau)
    , rule_(rule)
    , psi_(instruments(ds, rule))
    , h_(h)
  {
    check_tau(tau);
    omega_ = weight ? *weight : default_weight_psi(psi_, tau);
    if (omega_.rows() != psi_.cols() || omega_.cols() != psi_.cols())
      throw DomainError("weighting matrix has wrong dimension");
    if (!linalg::is_symmetric(omega_, 1e-10) || !linalg::is_psd(omega_, 1e-10))
      throw DomainError("weighting matrix must be symmetric positive semidefinite");
    if (h_ && !(*h_ > 0.0))
      throw DomainError("smoothing bandwidth must be positive");
  }

  const Dataset& data() const { return *ds_; }
  double tau() const { return tau_; }
  InstrumentRule rule() const { return rule_; }
  const Matrix& psi() const { return psi_; }
  const Matrix& weight() const { return omega_; }
  std::optional<double> bandwidth() const { return h_; }
  Index dim() const { return ds_->s() + ds_->k(); }

  GmmObjective with_bandwidth(std::optional<double> h) const
  {
    GmmObjective o = *this;
    if (h && !(*h > 0.0))
      throw DomainError("smoothing bandwidth must be positive");
    o.h_ = h;
    return o;
  }

  Vector moments(const Vector& theta) const
  {
    const Vector e = residuals(*ds_, theta);
    return h_ ? smoothed_moments_psi(psi_, e, tau_, *h_) : sample_moments_psi(psi_, e, tau_);
  }

  double operator()(const Vector& theta) const
  {
    const Vector g = moments(theta);
    return std::max(0.0, static_cast<double>(ds_->n()) * g.dot(omega_ * g));
  }

  /// Gradient of the smoothed objective (requires a bandwidth).
  Vector gradient(const Vector& theta) const
  {
    if (!h_)
      throw DomainError("gradient requires a smoothing bandwidth");
    const Vector g = moments(theta);
    const Matrix jac = smoothed_moments_jacobian(*ds_, theta, tau_, *h_, rule_);
    return 2.0 * static_cast<double>(ds_->n()) * jac.transpose() * (omega_ * g);
  }

private:
  const Dataset* ds_;
  double tau_;
  InstrumentRule rule_;
  Matrix psi_;
  Matrix omega_;
  std::optional<double> h_;
};

inline double objective(const GmmObjective& obj, const Vector& theta)
{
  return obj(theta);
}

struct GridSearchResult
{
  Vector best;
  double value = std::numeric_limits<double>::infinity();
  std::size_t index = 0;
  std::vector<double> values; ///< per node, in grid order
};

/// Exhaustive evaluation of f over a grid; ties resolve to the first node in
/// lexicographic order.
template <class F>
GridSearchResult grid_search(const Grid& grid, F&& f)
{
  const std::size_t n = grid.size();
  if (n == 0)
    throw DomainError("empty grid");
  GridSearchResult res;
  res.values.assign(n, std::numeric_limits<double>::infinity());
  detail::parallel_for(n, [&](std::size_t i) { res.values[i] = f(grid.node(i)); });
  for (std::size_t i = 0; i < n; ++i) {
    if (res.values[i] < res.value) {
      res.value = res.values[i];
      res.index = i;
    }
  }
  res.best = grid.node(res.index);
  return res;
}

namespace detail {

/// Nelder-Mead restricted to a box (points are clamped).
template <class F>
std::pair<Vector, double> nelder_mead_box(F&& f, const Vector& start, const Vector& lo,
                                          const Vector& hi, const Vector& init_step, int max_eval,
                                          double ftol)
{
  const Index d = start.size();
  auto clamp = [&](Vector v) {
    for (Index j = 0; j < d; ++j)
      v(j) = std::clamp(v(j), lo(j), hi(j));
    return v;
  };
  std::vector<Vector> pts;
  std::vector<double> vals;
  pts.push_back(clamp(start));
  for (Index j = 0; j < d; ++j) {
    Vector p = start;
    p(j) += init_step(j);
    if (p(j) > hi(j))
      p(j) = start(j) - init_step(j);
    pts.push_back(clamp(p));
  }
  int evals = 0;
  for (const auto& p : pts) {
    vals.push_back(f(p));
    ++evals;
  }
  std::vector<std::size_t> order(pts.size());
  while (evals < max_eval) {
    std::iota(order.begin(), order.end(), std::size_t{ 0 });
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return vals[a] < vals[b] || (vals[a] == vals[b] && a < b);
    });
    const std::size_t ib = order.front();
    const std::size_t iw = order.back();
    const std::size_t is = order[order.size() - 2];
    if (std::abs(vals[iw] - vals[ib]) <= ftol * (1.0 + std::abs(vals[ib])))
      break;
    Vector centroid = Vector::Zero(d);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != iw)
        centroid += pts[i];
    centroid /= static_cast<double>(d);
    const Vector xr = clamp(centroid + (centroid - pts[iw]));
    const double fr = f(xr);
    ++evals;
    if (fr < vals[ib]) {
      const Vector xe = clamp(centroid + 2.0 * (centroid - pts[iw]));
      const double fe = f(xe);
      ++evals;
      if (fe < fr) {
        pts[iw] = xe;
        vals[iw] = fe;
      } else {
        pts[iw] = xr;
        vals[iw] = fr;
      }
    } else if (fr < vals[is]) {
      pts[iw] = xr;
      vals[iw] = fr;
    } else {
      const bool outside = fr < vals[iw];
      const Vector xc = outside ? clamp(centroid + 0.5 * (xr - centroid))
                                : clamp(centroid + 0.5 * (pts[iw] - centroid));
      const double fc = f(xc);
      ++evals;
      if (fc < std::min(fr, vals[iw])) {
        pts[iw] = xc;
        vals[iw] = fc;
      } else {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == ib)
            continue;
          pts[i] = clamp(pts[ib] + 0.5 * (pts[i] - pts[ib]));
          vals[i] = f(pts[i]);
          ++evals;
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (vals[i] < vals[best])
      best = i;
  return { pts[best], vals[best] };
}

} // namespace detail

enum class SearchKind
{
  grid,
  multistart
};

struct SearchStrategy
{
  SearchKind kind = SearchKind::grid;
  /// Grid step per coordinate; empty means (upper - lower) / 200.
  std::vector<double> steps;
  /// Multistart: number of best grid nodes used as local-search starts.
  int starts = 5;
  int max_evaluations = 2000;
};

/// Minimises the objective over a box. The grid strategy evaluates every node;
/// the multistart strategy evaluates the grid (usually coarse) and refines the
/// best nodes by Nelder-Mead on the objective as configured (smoothed when a
/// bandwidth is set). The returned point is never worse than any examined node.
inline EstimateResult minimize_gmm(const GmmObjective& obj, const Box& space,
                                   const SearchStrategy& strategy = {})
{
  space.validate();
  if (space.dim() != obj.dim())
    throw DomainError("parameter box dimension does not match theta");
  std::vector<double> steps = strategy.steps;
  if (steps.empty())
    for (Index j = 0; j < space.dim(); ++j)
      steps.push_back((space.upper(j) - space.lower(j)) / 200.0);
  const Grid grid = space.grid(steps);
  GridSearchResult gs = grid_search(grid, [&](const Vector& t) { return obj(t); });
  Vector best = gs.best;
  double best_val = gs.value;
  if (strategy.kind == SearchKind::multistart) {
    std::vector<std::size_t> order(gs.values.size());
    std::iota(order.begin(), order.end(), std::size_t{ 0 });
    const auto nstart = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, strategy.starts)),
                                              order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(nstart), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return gs.values[a] < gs.values[b] || (gs.values[a] == gs.values[b] && a < b);
                      });
    Vector init(space.dim());
    for (Index j = 0; j < space.dim(); ++j)
      init(j) = std::max(steps[static_cast<std::size_t>(j)], 1e-6);
    for (std::size_t s = 0; s < nstart; ++s) {
      auto [pt, val] = detail::nelder_mead_box([&](const Vector& t) { return obj(t); },
                                               grid.node(order[s]), space.lower, space.upper, init,
                                               strategy.max_evaluations, 1e-12);
      if (val < best_val) {
        best_val = val;
        best = pt;
      }
    }
  }
  EstimateResult res;
  const Index s = obj.data().s();
  res.alpha_hat = best.head(s);
  res.beta_hat = best.tail(obj.data().k());
  res.tau = obj.tau();
  res.objective = best_val;
  res.method = obj.bandwidth() ? "gmm-smoothed" : "gmm";
  res.notes["strategy"] = strategy.kind == SearchKind::grid ? "grid" : "multistart";
  res.notes["grid_nodes"] = std::to_string(grid.size());
  if (obj.bandwidth())
    res.notes["bandwidth"] = csv::format_number(*obj.bandwidth());
  return res;
}

} // namespace ivqr
