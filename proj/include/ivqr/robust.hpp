#pragma once

// Confidence sets that remain valid under weak identification: the
// Anderson-Rubin-type region from the IQR Wald statistic, conditional QLR with
// simulated critical values, and the exact finite-sample region built on the
// pivotal Bernoulli representation of the GMM criterion at the truth.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "csv.hpp"
#include "data.hpp"
#include "detail/parallel.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "iqr.hpp"
#include "linalg.hpp"
#include "orthogonal.hpp"
#include "rng.hpp"

namespace ivqr {

inline double chi2_quantile(int df, double level)
{
  if (df < 1)
    throw DomainError("chi2_quantile: degrees of freedom must be at least 1");
  if (!(level > 0.0 && level < 1.0))
    throw DomainError("chi2_quantile: level must lie in (0,1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(df), level);
}

/// Order statistic at 1-based index ceil((1-p) B) of the draws.
inline double empirical_critical_value(std::vector<double> draws, double p)
{
  if (draws.empty())
    throw DomainError("empirical_critical_value: no draws");
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("level p must lie in (0,1)");
  std::sort(draws.begin(), draws.end());
  const double b = static_cast<double>(draws.size());
  auto idx = static_cast<std::size_t>(std::ceil((1.0 - p) * b - 1e-9));
  idx = std::clamp<std::size_t>(idx, 1, draws.size());
  return draws[idx - 1];
}

struct ConfidenceRegion
{
  Grid grid;
  std::vector<double> statistic;
  std::vector<double> critical;
  std::vector<char> accept;
  double level = 0.95; ///< 1 - p
  std::string method;
  bool regularized = false;  ///< a covariance needed a ridge somewhere
  bool conservative = false; ///< projections of a joint region
  std::vector<std::string> notes;

  std::size_t size() const { return accept.size(); }
  std::size_t accepted() const
  {
    return static_cast<std::size_t>(std::count(accept.begin(), accept.end(), 1));
  }
  bool empty() const { return accepted() == 0; }

  /// [min, max] of accepted values of coordinate j, if any.
  std::optional<std::pair<double, double>> hull(Index j) const
  {
    std::optional<std::pair<double, double>> h;
    for (std::size_t i = 0; i < accept.size(); ++i) {
      if (!accept[i])
        continue;
      const double v = grid.node(i)(j);
      if (!h)
        h = std::make_pair(v, v);
      h->first = std::min(h->first, v);
      h->second = std::max(h->second, v);
    }
    return h;
  }

  /// Does the region accept the grid node nearest to `point`?
  bool covers(const Vector& point) const
  {
    std::size_t flat = 0;
    for (Index j = 0; j < grid.dim(); ++j) {
      const auto& ax = grid.axes()[static_cast<std::size_t>(j)];
      std::size_t best = 0;
      for (std::size_t i = 1; i < ax.size(); ++i)
        if (std::abs(ax[i] - point(j)) < std::abs(ax[best] - point(j)))
          best = i;
      flat = flat * ax.size() + best;
    }
    return accept[flat] != 0;
  }
};

inline void check_level(double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("level p must lie in (0,1)");
}

/// Anderson-Rubin-type region {a : W_N(a) <= chi2_{dim Z}(1 - p)}.
inline ConfidenceRegion ar_region_from_profiles(const std::vector<IqrProfile>& table,
                                                const Grid& grid, Index dim_z, double p)
{
  check_level(p);
  ConfidenceRegion r;
  r.grid = grid;
  r.level = 1.0 - p;
  r.method = "ar";
  const double c = chi2_quantile(static_cast<int>(dim_z), 1.0 - p);
  std::size_t failed = 0;
  for (const auto& prof : table) {
    r.statistic.push_back(prof.wald);
    r.critical.push_back(c);
    r.accept.push_back(prof.ok() && prof.wald <= c ? 1 : 0);
    failed += !prof.ok();
  }
  if (failed)
    r.notes.push_back(std::to_string(failed) + " grid point(s) failed and were rejected");
  return r;
}

inline ConfidenceRegion ar_region(const Dataset& ds, double tau, const Grid& alpha_grid, double p,
                                  const IqrOptions& opt = {})
{
  check_tau(tau);
  check_level(p);
  if (alpha_grid.size() == 0)
    throw DomainError("ar_region: empty grid");
  return ar_region_from_profiles(profile_grid(ds, tau, alpha_grid, opt), alpha_grid, ds.m(), p);
}

struct QlrDraws
{
  std::vector<Matrix> S;                   ///< per null point: G x m matrix of S(a)
  std::vector<std::vector<double>> draws;  ///< per null point: B simulated QLR* values
  std::vector<double> critical;
  std::vector<double> m_values;            ///< m_N(a) per grid point
};

/// Conditional QLR inversion from per-point score matrices (N x m each):
/// h(a) = sqrt(N) g_N(a), Sigma(a1, a2) = G(a1)'G(a2)/N.
inline ConfidenceRegion conditional_qlr(const std::vector<Matrix>& scores, const Grid& grid,
                                        double p, int draws, std::uint64_t seed,
                                        QlrDraws* out = nullptr)
{
  check_level(p);
  if (draws < 1)
    throw DomainError("conditional_qlr: at least one draw is required");
  const std::size_t gsz = scores.size();
  if (gsz == 0 || gsz != grid.size())
    throw DomainError("conditional_qlr: one score matrix per grid point is required");
  const Index n = scores.front().rows();
  const Index m = scores.front().cols();
  const double sn = std::sqrt(static_cast<double>(n));

  std::vector<Vector> hvec(gsz);
  std::vector<Matrix> sinv(gsz);
  std::vector<double> mval(gsz);
  std::vector<char> reg(gsz, 0);
  detail::parallel_for(gsz, [&](std::size_t i) {
    hvec[i] = sn * scores[i].colwise().mean().transpose();
    bool r = false;
    sinv[i] = linalg::inverse_ridge(covariance_kernel(scores[i], scores[i]), r);
    reg[i] = r;
    mval[i] = std::max(0.0, hvec[i].dot(sinv[i] * hvec[i]));
  });
  const double mmin = *std::min_element(mval.begin(), mval.end());

  ConfidenceRegion region;
  region.grid = grid;
  region.level = 1.0 - p;
  region.statistic.resize(gsz);
  region.critical.resize(gsz);
  region.accept.resize(gsz);
  if (out) {
    out->S.assign(gsz, Matrix());
    out->draws.assign(gsz, {});
    out->critical.assign(gsz, 0.0);
    out->m_values = mval;
  }
  const Rng root(seed);
  detail::parallel_for(gsz, [&](std::size_t j) {
    const Matrix s00 = covariance_kernel(scores[j], scores[j]);
    bool r = false;
    const Matrix s00inv = linalg::inverse_ridge(s00, r);
    Matrix s00reg = 0.5 * (s00 + s00.transpose());
    if (r)
      s00reg.diagonal().array() += 1e-8 * s00.trace() / static_cast<double>(m);
    Eigen::LDLT<Matrix> chol(s00reg);
    const Matrix l = chol.transpositionsP().transpose() * Matrix(chol.matrixL()) *
                     chol.vectorD().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    std::vector<Matrix> amat(gsz);
    Matrix smat(static_cast<Index>(gsz), m);
    for (std::size_t i = 0; i < gsz; ++i) {
      amat[i] = covariance_kernel(scores[i], scores[j]) * s00inv;
      smat.row(static_cast<Index>(i)) = (hvec[i] - amat[i] * hvec[j]).transpose();
    }
    Rng rng = root.split(j);
    std::vector<double> stats(static_cast<std::size_t>(draws));
    Vector zeta(m), hstar(m);
    for (int b = 0; b < draws; ++b) {
      for (Index c = 0; c < m; ++c)
        zeta(c) = rng.normal();
      zeta = l * zeta;
      double mmin_b = std::numeric_limits<double>::infinity();
      double m0 = 0.0;
      for (std::size_t i = 0; i < gsz; ++i) {
        hstar = smat.row(static_cast<Index>(i)).transpose() + amat[i] * zeta;
        const double mv = hstar.dot(sinv[i] * hstar);
        mmin_b = std::min(mmin_b, mv);
        if (i == j)
          m0 = mv;
      }
      stats[static_cast<std::size_t>(b)] = m0 - mmin_b;
    }
    const double crit = empirical_critical_value(stats, p);
    region.statistic[j] = mval[j] - mmin;
    region.critical[j] = crit;
    region.accept[j] = region.statistic[j] <= crit ? 1 : 0;
    if (r)
      reg[j] = 1;
    if (out) {
      out->S[j] = smat;
      out->draws[j] = std::move(stats);
      out->critical[j] = crit;
    }
  });
  region.regularized = std::any_of(reg.begin(), reg.end(), [](char c) { return c != 0; });
  region.notes.push_back("moments scaled by sqrt(N) in both sample and simulated statistics");
  if (region.regularized)
    region.notes.push_back("covariance ridge 1e-8*trace/r applied at some grid points");
  return region;
}

inline std::vector<Matrix> ortho_scores_on_grid(const Dataset& ds, double tau, const Grid& grid,
                                                const OrthoOptions& opt)
{
  std::vector<Matrix> scores(grid.size());
  detail::parallel_for(grid.size(), [&](std::size_t i) {
    scores[i] = ortho_score(ds, tau, grid.node(i), opt).scores;
  });
  return scores;
}

/// Conditional QLR with unpenalised profiling and delta = M J^{-1}.
inline ConfidenceRegion qlr_region(const Dataset& ds, double tau, const Grid& alpha_grid,
                                   double p, int draws, std::uint64_t seed, double h = 0.0,
                                   QlrDraws* out = nullptr)
{
  check_tau(tau);
  OrthoOptions opt;
  opt.profiling = Profiling::plain;
  opt.vartheta = 0.0;
  opt.h = h;
  ConfidenceRegion r =
    conditional_qlr(ortho_scores_on_grid(ds, tau, alpha_grid, opt), alpha_grid, p, draws, seed, out);
  r.method = "qlr";
  return r;
}

/// Conditional QLR with orthogonal scores under the chosen profiling path.
inline ConfidenceRegion qlr2_region(const Dataset& ds, double tau, const Grid& alpha_grid,
                                    double p, int draws, std::uint64_t seed,
                                    const OrthoOptions& opt = {}, QlrDraws* out = nullptr)
{
  check_tau(tau);
  ConfidenceRegion r =
    conditional_qlr(ortho_scores_on_grid(ds, tau, alpha_grid, opt), alpha_grid, p, draws, seed, out);
  r.method = "qlr2";
  r.notes.push_back("profiling=" + to_string(opt.profiling));
  return r;
}

struct FiniteSampleDistribution
{
  std::vector<double> draws; ///< sorted

  /// c_{1-p}: order statistic ceil((1-p) B).
  double quantile(double p) const { return empirical_critical_value(draws, p); }
};

/// B draws of m~ = (N^{-1/2} sum (tau - B_i) Psi_i)' Omega (...), B_i ~ Bernoulli(tau).
inline FiniteSampleDistribution finite_sample_distribution(const Matrix& psi, double tau,
                                                           const Matrix& omega, int draws,
                                                           std::uint64_t seed)
{
  check_tau(tau);
  if (draws < 1)
    throw DomainError("finite_sample_distribution: at least one draw is required");
  if (omega.rows() != psi.cols() || omega.cols() != psi.cols())
    throw DomainError("finite_sample_distribution: weighting matrix has wrong dimension");
  const Index n = psi.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  FiniteSampleDistribution dist;
  dist.draws.resize(static_cast<std::size_t>(draws));
  const Rng root(seed);
  detail::parallel_for(static_cast<std::size_t>(draws), [&](std::size_t b) {
    Rng rng = root.split(b);
    Vector g = Vector::Zero(psi.cols());
    for (Index i = 0; i < n; ++i)
      g += (tau - (rng.uniform() < tau ? 1.0 : 0.0)) * psi.row(i).transpose();
    g *= scale;
    dist.draws[b] = g.dot(omega * g);
  });
  std::sort(dist.draws.begin(), dist.draws.end());
  return dist;
}

inline constexpr std::size_t finite_sample_node_cap = 10'000'000;

struct FiniteSampleRegion
{
  ConfidenceRegion joint;
  std::vector<std::optional<std::pair<double, double>>> projections; ///< per coordinate
  double critical = 0.0;
};

/// Joint region {theta : m_N(theta) <= c_{1-p}} over a grid on the full
/// (alpha, beta) space, with conservative coordinate projections.
inline FiniteSampleRegion finite_sample_region(const Dataset& ds, double tau, const Grid& theta_grid,
                                               double p, int draws, std::uint64_t seed,
                                               InstrumentRule rule = InstrumentRule::stacked_zx)
{
  check_tau(tau);
  check_level(p);
  if (theta_grid.dim() != ds.s() + ds.k())
    throw DomainError("finite_sample_region: grid must span the full (alpha, beta) space");
  if (theta_grid.size() > finite_sample_node_cap)
    throw SizeError("finite_sample_region: grid has " + std::to_string(theta_grid.size()) +
                    " nodes, above the cap of 10^7; coarsen the steps, narrow the box or "
                    "fix some coordinates");
  const GmmObjective obj(ds, tau, rule);
  const FiniteSampleDistribution dist = finite_sample_distribution(obj.psi(), tau, obj.weight(), draws, seed);
  FiniteSampleRegion out;
  out.critical = dist.quantile(p);
  ConfidenceRegion& r = out.joint;
  r.grid = theta_grid;
  r.level = 1.0 - p;
  r.method = "finite-sample";
  r.conservative = false;
  r.statistic.resize(theta_grid.size());
  r.critical.assign(theta_grid.size(), out.critical);
  r.accept.resize(theta_grid.size());
  const double c = out.critical;
  detail::parallel_for(theta_grid.size(), [&](std::size_t i) {
    r.statistic[i] = obj(theta_grid.node(i));
    r.accept[i] = r.statistic[i] > c + 1e-9 * (1.0 + c) ? 0 : 1;
  });
  for (Index j = 0; j < theta_grid.dim(); ++j)
    out.projections.push_back(r.hull(j));
  r.notes.push_back("coordinate projections are conservative");
  return out;
}

/// Region CSV: grid coordinates, statistic, critical value, accept flag.
inline void write_region_csv(std::ostream& out, const ConfidenceRegion& r,
                             const std::vector<std::string>& coord_names,
                             const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  w.comment("method=" + r.method + " level=" + csv::format_number(r.level));
  for (const auto& n : r.notes)
    w.comment(n);
  std::vector<std::string> header = coord_names;
  header.insert(header.end(), { "statistic", "critical", "accept" });
  w.row(header);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const Vector node = r.grid.node(i);
    std::vector<std::string> row;
    for (Index j = 0; j < node.size(); ++j)
      row.push_back(csv::format_number(node(j)));
    row.push_back(csv::format_number(r.statistic[i]));
    row.push_back(csv::format_number(r.critical[i]));
    row.push_back(r.accept[i] ? "1" : "0");
    w.row(row);
  }
}

} // namespace ivqr
