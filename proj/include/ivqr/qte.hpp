#pragma once

// Structural quantile processes tau -> d'alpha(tau) + x'beta(tau), the implied
// conditional and unconditional distribution functions of the potential
// outcomes, and quantile treatment effects.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "iqr.hpp"
#include "linalg.hpp"

namespace ivqr {

struct QuantileProcess
{
  std::vector<double> tau_grid; ///< strictly increasing, inside (0,1)
  Matrix alpha;                 ///< T x s
  Matrix beta;                  ///< T x k
  bool monotonized = false;

  Index size() const { return static_cast<Index>(tau_grid.size()); }

  void validate() const
  {
    if (tau_grid.empty())
      throw DomainError("quantile process has an empty tau grid");
    for (std::size_t i = 0; i < tau_grid.size(); ++i) {
      check_tau(tau_grid[i]);
      if (i > 0 && !(tau_grid[i] > tau_grid[i - 1]))
        throw DomainError("quantile process tau grid must be strictly increasing");
    }
    if (alpha.rows() != size() || beta.rows() != size())
      throw DomainError("quantile process coefficient rows do not match the tau grid");
  }
};

/// Default grid {0.01, ..., 0.99}.
inline std::vector<double> default_tau_grid()
{
  std::vector<double> g;
  for (int i = 1; i <= 99; ++i)
    g.push_back(i / 100.0);
  return g;
}

/// Assembles a process from per-tau estimates; failed rows are rejected.
inline QuantileProcess quantile_process(const std::vector<ProcessRow>& rows)
{
  QuantileProcess p;
  if (rows.empty())
    throw DomainError("quantile_process: no rows");
  for (const auto& r : rows)
    if (!r.estimate)
      throw Error("quantile_process: estimate at tau=" + csv::format_number(r.tau) +
                  " failed: " + r.error);
  const Index s = rows.front().estimate->alpha_hat.size();
  const Index k = rows.front().estimate->beta_hat.size();
  p.alpha.resize(static_cast<Index>(rows.size()), s);
  p.beta.resize(static_cast<Index>(rows.size()), k);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    p.tau_grid.push_back(rows[i].tau);
    p.alpha.row(static_cast<Index>(i)) = rows[i].estimate->alpha_hat.transpose();
    p.beta.row(static_cast<Index>(i)) = rows[i].estimate->beta_hat.transpose();
  }
  p.validate();
  return p;
}

/// Marks the process for rearrangement: evaluated curves are sorted in tau.
inline QuantileProcess monotonize(QuantileProcess proc)
{
  proc.monotonized = true;
  return proc;
}

/// q(tau_t, d, x) for every grid node, sorted when the process is monotonized.
inline std::vector<double> evaluate_curve(const QuantileProcess& proc, const Vector& d,
                                          const Vector& x)
{
  if (d.size() != proc.alpha.cols() || x.size() != proc.beta.cols())
    throw DomainError("structural quantile: (d, x) dimensions do not match the process");
  std::vector<double> v(static_cast<std::size_t>(proc.size()));
  for (Index t = 0; t < proc.size(); ++t)
    v[static_cast<std::size_t>(t)] = proc.alpha.row(t).dot(d) + proc.beta.row(t).dot(x);
  if (proc.monotonized)
    std::sort(v.begin(), v.end());
  return v;
}

inline std::size_t nearest_node(const QuantileProcess& proc, double tau, bool* off_grid)
{
  std::size_t best = 0;
  for (std::size_t i = 1; i < proc.tau_grid.size(); ++i)
    if (std::abs(proc.tau_grid[i] - tau) < std::abs(proc.tau_grid[best] - tau))
      best = i;
  if (off_grid)
    *off_grid = std::abs(proc.tau_grid[best] - tau) > 1e-12;
  return best;
}

/// d'alpha(tau) + x'beta(tau) at the nearest grid node (`off_grid` reports
/// whether tau was not a node).
inline double structural_quantile(const QuantileProcess& proc, double tau, const Vector& d,
                                  const Vector& x, bool* off_grid = nullptr)
{
  const std::size_t t = nearest_node(proc, tau, off_grid);
  if (!proc.monotonized) {
    if (d.size() != proc.alpha.cols() || x.size() != proc.beta.cols())
      throw DomainError("structural quantile: (d, x) dimensions do not match the process");
    const auto ti = static_cast<Index>(t);
    return proc.alpha.row(ti).dot(d) + proc.beta.row(ti).dot(x);
  }
  return evaluate_curve(proc, d, x)[t];
}

/// Trapezoid rule for the integral over tau of 1(q(tau) <= y), with the mass
/// below the first node and above the last node given to the end nodes.
inline double cdf_from_sorted_curve(const std::vector<double>& taus,
                                    const std::vector<double>& curve, double y)
{
  const std::size_t t = curve.size();
  const auto count = static_cast<std::size_t>(std::upper_bound(curve.begin(), curve.end(), y) -
                                              curve.begin());
  if (count == 0)
    return 0.0;
  if (count == t)
    return 1.0;
  return 0.5 * (taus[count - 1] + taus[count]);
}

inline double conditional_cdf(const QuantileProcess& proc, double y, const Vector& d,
                              const Vector& x)
{
  std::vector<double> curve = evaluate_curve(proc, d, x);
  if (!proc.monotonized)
    std::sort(curve.begin(), curve.end());
  return cdf_from_sorted_curve(proc.tau_grid, curve, y);
}

/// Unconditional CDF of Y_d: the conditional CDF averaged over the rows of X.
class UnconditionalCdf
{
public:
  UnconditionalCdf(const QuantileProcess& proc, const Dataset& ds, const Vector& d)
    : taus_(proc.tau_grid)
  {
    proc.validate();
    curves_.reserve(static_cast<std::size_t>(ds.n()));
    for (Index i = 0; i < ds.n(); ++i) {
      std::vector<double> c = evaluate_curve(proc, d, ds.x().row(i).transpose());
      std::sort(c.begin(), c.end());
      curves_.push_back(std::move(c));
    }
  }

  double operator()(double y) const
  {
    double s = 0.0;
    for (const auto& c : curves_)
      s += cdf_from_sorted_curve(taus_, c, y);
    return s / static_cast<double>(curves_.size());
  }

  /// Smallest y (to bisection tolerance) in [lo, hi] with F(y) >= tau.
  double inverse(double tau, double lo, double hi) const
  {
    if ((*this)(lo) >= tau || (*this)(hi) < tau)
      throw DomainError("unconditional quantile: [" + csv::format_number(lo) + ", " +
                        csv::format_number(hi) +
                        "] does not bracket the requested level; extend the outcome range");
    const double tol = 1e-10 * std::max(1.0, hi - lo);
    while (hi - lo > tol) {
      const double mid = 0.5 * (lo + hi);
      if ((*this)(mid) >= tau)
        hi = mid;
      else
        lo = mid;
    }
    return hi;
  }

private:
  std::vector<double> taus_;
  std::vector<std::vector<double>> curves_;
};

inline double unconditional_cdf(const QuantileProcess& proc, const Dataset& ds, double y,
                                const Vector& d)
{
  return UnconditionalCdf(proc, ds, d)(y);
}

/// Observed outcome range widened by 10% on each side.
inline std::pair<double, double> outcome_bracket(const Dataset& ds)
{
  const double lo = ds.y().minCoeff();
  const double hi = ds.y().maxCoeff();
  const double pad = 0.1 * std::max(hi - lo, 1e-12);
  return { lo - pad, hi + pad };
}

inline double unconditional_qte(const QuantileProcess& proc, const Dataset& ds, double tau,
                                const Vector& d1, const Vector& d0)
{
  check_tau(tau);
  const auto [lo, hi] = outcome_bracket(ds);
  const double q1 = UnconditionalCdf(proc, ds, d1).inverse(tau, lo, hi);
  const double q0 = UnconditionalCdf(proc, ds, d0).inverse(tau, lo, hi);
  return q1 - q0;
}

struct QteRow
{
  double tau = 0.5;
  double conditional = 0.0;   ///< at the reference x
  double unconditional = 0.0;
};

/// QTE table at the given levels (conditional QTE at reference covariates).
inline std::vector<QteRow> qte_table(const QuantileProcess& proc, const Dataset& ds,
                                     const std::vector<double>& taus, const Vector& d1,
                                     const Vector& d0, const Vector& x_ref)
{
  const auto [lo, hi] = outcome_bracket(ds);
  const UnconditionalCdf f1(proc, ds, d1);
  const UnconditionalCdf f0(proc, ds, d0);
  std::vector<QteRow> rows;
  for (double tau : taus) {
    QteRow r;
    r.tau = tau;
    r.conditional = structural_quantile(proc, tau, d1, x_ref) - structural_quantile(proc, tau, d0, x_ref);
    r.unconditional = f1.inverse(tau, lo, hi) - f0.inverse(tau, lo, hi);
    rows.push_back(r);
  }
  return rows;
}

inline void write_qte_csv(std::ostream& out, const std::vector<QteRow>& rows,
                          const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  w.row({ "tau", "conditional_qte", "unconditional_qte" });
  for (const auto& r : rows)
    w.row({ csv::format_number(r.tau), csv::format_number(r.conditional),
            csv::format_number(r.unconditional) });
}

} // namespace ivqr
