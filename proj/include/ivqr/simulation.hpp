#pragma once

// Data-generating processes with known structural quantile functions, a
// Monte Carlo driver and brute-force oracles for small instances.
//
// Design A: binary instrument, binary treatment, rank invariance.
// Design B: as A with one-sided noncompliance (D = 0 whenever Z = 0).
// Design C: log-linear demand with a supply shifter and market-clearing price.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "data.hpp"
#include "detail/parallel.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace ivqr {

inline double normal_cdf(double x)
{
  return 0.5 * std::erfc(-x / M_SQRT2);
}

inline double normal_quantile(double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("normal_quantile: probability must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

struct DgpDesign
{
  char name = 'A';
  Index n = 1000;
  std::uint64_t seed = 1;
  double rho = 0.5;   ///< endogeneity: correlation of the selection shock with the rank
  double pi0 = 0.0;
  double pi1 = 1.0;   ///< instrument strength (0.1 for the weak variant)
  double alpha0 = 1.0; ///< alpha(tau) = alpha0 + alpha1 * tau
  double alpha1 = 0.0;
  /// Baseline quantile function beta(tau) = baseline_scale * Phi^{-1}(tau).
  double baseline_scale = 0.5;
  /// Extra N(0,1) covariates appended to X after the intercept, entering the
  /// outcome with these coefficients (zeros allowed).
  std::vector<double> covariate_coef;
  /// > 0 replaces U_1 by Phi((E + M)/sqrt(1 + s^2)), M ~ N(0, s^2): ranks slip
  /// with treatment and rank similarity fails.
  double slippage_sd = 0.0;
  /// Design C supply curve: ln Q = supply_const + supply_slope ln p + supply_shift Z + nu.
  double supply_const = 0.0;
  double supply_slope = 1.0;
  double supply_shift = 1.0;

  void validate() const
  {
    if (name != 'A' && name != 'B' && name != 'C')
      throw DomainError("unknown design '" + std::string(1, name) + "'");
    if (!(rho >= -1.0 && rho <= 1.0))
      throw DomainError("rho must lie in [-1, 1]");
    if (n < 1)
      throw DomainError("sample size must be at least 1");
    if (!(baseline_scale > 0.0))
      throw DomainError("baseline scale must be positive");
    if (!(slippage_sd >= 0.0))
      throw DomainError("slippage sd must be nonnegative");
    if (name == 'C') {
      if (!(supply_slope > 0.0))
        throw DomainError("design C needs an upward sloping supply curve");
      // Demand slope alpha(tau) must stay negative on (0,1) for a unique price.
      if (!(alpha0 < 0.0 && alpha0 + alpha1 < 0.0))
        throw DomainError("design C needs a downward sloping demand curve for every rank");
    }
  }

  double alpha(double tau) const { return alpha0 + alpha1 * tau; }

  /// True theta(tau) = (alpha(tau), beta(tau), covariate coefficients).
  Vector theta(double tau) const
  {
    const Index extra = static_cast<Index>(covariate_coef.size());
    Vector t(2 + extra);
    t(0) = alpha(tau);
    t(1) = baseline_scale * normal_quantile(tau);
    for (Index j = 0; j < extra; ++j)
      t(2 + j) = covariate_coef[static_cast<std::size_t>(j)];
    return t;
  }

  /// Structural quantile q(tau, d, x).
  double quantile(double tau, double d, const Eigen::Ref<const RowVector>& x) const
  {
    const Vector t = theta(tau);
    return d * t(0) + x.dot(t.tail(x.size()));
  }
};

struct SimSample
{
  Dataset data;
  DgpDesign design;
  Vector u0; ///< rank of the untreated outcome
  Vector u1; ///< rank of the treated outcome (equal to u0 under rank invariance)
  Vector y0; ///< potential outcome at d = 0
  Vector y1; ///< potential outcome at d = 1
};

namespace detail {

inline double clearing_log_price(double demand_level, double demand_slope, double supply_level,
                                 double supply_slope)
{
  // demand_level + demand_slope x = supply_level + supply_slope x, excess demand decreasing.
  auto excess = [&](double x) {
    return demand_level + demand_slope * x - supply_level - supply_slope * x;
  };
  double lo = -1.0;
  double hi = 1.0;
  while (excess(lo) < 0.0)
    lo *= 2.0;
  while (excess(hi) > 0.0)
    hi *= 2.0;
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (excess(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace detail

inline SimSample generate(const DgpDesign& design)
{
  design.validate();
  const Index n = design.n;
  const Index extra = static_cast<Index>(design.covariate_coef.size());
  Rng rng(design.seed);
  Vector y(n), d(n), z(n), u0(n), u1(n), y0(n), y1(n);
  Matrix x(n, 1 + extra);
  const double c = std::sqrt(std::max(0.0, 1.0 - design.rho * design.rho));
  for (Index i = 0; i < n; ++i) {
    const double e = rng.normal();
    const double w = rng.normal();
    const double v = design.rho * e + c * w;
    x(i, 0) = 1.0;
    for (Index j = 0; j < extra; ++j)
      x(i, 1 + j) = rng.normal();
    double loc = 0.0;
    for (Index j = 0; j < extra; ++j)
      loc += design.covariate_coef[static_cast<std::size_t>(j)] * x(i, 1 + j);
    u0(i) = normal_cdf(e);
    u1(i) = u0(i);
    if (design.slippage_sd > 0.0) {
      const double s = design.slippage_sd;
      u1(i) = normal_cdf((e + s * rng.normal()) / std::sqrt(1.0 + s * s));
    }
    if (design.name == 'C') {
      z(i) = rng.normal();
      const double level = design.baseline_scale * normal_quantile(u0(i)) + loc;
      const double lp = detail::clearing_log_price(level, design.alpha(u0(i)),
                                                   design.supply_const + design.supply_shift * z(i) + v,
                                                   design.supply_slope);
      d(i) = lp;
      y0(i) = level;
      y1(i) = level + design.alpha(u0(i));
      y(i) = level + design.alpha(u0(i)) * lp;
      continue;
    }
    z(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const bool select = design.pi0 + design.pi1 * z(i) + v > 0.0;
    d(i) = design.name == 'B' ? (z(i) > 0.0 && v > 0.0 ? 1.0 : 0.0) : (select ? 1.0 : 0.0);
    y0(i) = design.baseline_scale * normal_quantile(u0(i)) + loc;
    y1(i) = design.baseline_scale * normal_quantile(u1(i)) + design.alpha(u1(i)) + loc;
    y(i) = d(i) > 0.0 ? y1(i) : y0(i);
  }
  std::vector<std::string> xl{ "x0" };
  for (Index j = 0; j < extra; ++j)
    xl.push_back("x" + std::to_string(j + 1));
  Dataset ds(y, d, x, z, "y", { "d" }, xl, { "z" });
  return SimSample{ std::move(ds), design, u0, u1, y0, y1 };
}

struct RestrictionCell
{
  int z = 0;   ///< instrument value (design C: 0 below the median, 1 above)
  int bin = 0; ///< quartile bin of the first extra covariate (0 if none)
  Index n = 0;
  double frequency = 0.0;
  bool within_band = true; ///< |frequency - tau| <= 3 sqrt(tau(1-tau)/n)
};

struct RestrictionReport
{
  double tau = 0.5;
  std::vector<RestrictionCell> cells;
  double max_deviation = 0.0;
  double fraction_within_band = 1.0;
};

/// Empirical P[Y <= q(tau, D, X) | X, Z] by cell, compared to tau.
inline RestrictionReport verify_model_restriction(const SimSample& sample, double tau)
{
  check_tau(tau);
  const Dataset& ds = sample.data;
  const DgpDesign& dg = sample.design;
  const Index n = ds.n();
  const bool has_cov = ds.k() > 1;
  std::vector<double> cuts;
  if (has_cov) {
    std::vector<double> v(ds.x().col(1).data(), ds.x().col(1).data() + n);
    std::sort(v.begin(), v.end());
    for (int q = 1; q < 4; ++q)
      cuts.push_back(v[static_cast<std::size_t>(q * n / 4)]);
  }
  double zsplit = 0.5;
  if (dg.name == 'C') {
    std::vector<double> v(ds.z().data(), ds.z().data() + n);
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    zsplit = v[static_cast<std::size_t>(n / 2)];
  }
  std::map<std::pair<int, int>, std::pair<Index, Index>> counts;
  for (Index i = 0; i < n; ++i) {
    const int zc = ds.z()(i, 0) > zsplit || (dg.name != 'C' && ds.z()(i, 0) > 0.5) ? 1 : 0;
    int bin = 0;
    if (has_cov)
      bin = static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), ds.x()(i, 1)) - cuts.begin());
    const double q = dg.quantile(tau, ds.d()(i, 0), ds.x().row(i));
    auto& c = counts[{ zc, bin }];
    ++c.first;
    if (ds.y()(i) <= q)
      ++c.second;
  }
  RestrictionReport rep;
  rep.tau = tau;
  Index inside = 0;
  for (const auto& [key, c] : counts) {
    RestrictionCell cell;
    cell.z = key.first;
    cell.bin = key.second;
    cell.n = c.first;
    cell.frequency = static_cast<double>(c.second) / static_cast<double>(c.first);
    const double dev = std::abs(cell.frequency - tau);
    cell.within_band = dev <= 3.0 * std::sqrt(tau * (1.0 - tau) / static_cast<double>(c.first));
    rep.max_deviation = std::max(rep.max_deviation, dev);
    inside += cell.within_band;
    rep.cells.push_back(cell);
  }
  rep.fraction_within_band =
    rep.cells.empty() ? 1.0 : static_cast<double>(inside) / static_cast<double>(rep.cells.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Monte Carlo driver

/// One estimate produced by one method in one replication.
struct McRecord
{
  std::string method;
  double estimate = 0.0;
  double truth = 0.0;
  int covered = -1; ///< 1/0 when the method reports an interval, -1 otherwise
};

struct McRow
{
  std::string method;
  Index replications = 0; ///< successful replications
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double bias_se = 0.0; ///< sd / sqrt(R)
  double coverage = std::nan("");
  bool sd_degenerate = false; ///< R = 1: sd reported as 0 by convention
};

struct McTable
{
  std::vector<McRow> rows;
  Index failures = 0;
  std::vector<std::string> failure_messages;
  std::vector<std::vector<McRecord>> records; ///< per replication (empty when failed)

  const McRow& row(const std::string& method) const
  {
    for (const auto& r : rows)
      if (r.method == method)
        return r;
    throw DomainError("no Monte Carlo row for method '" + method + "'");
  }

  /// Raw per-replication estimates of one method (successful replications only).
  std::vector<double> estimates(const std::string& method) const
  {
    std::vector<double> v;
    for (const auto& rep : records)
      for (const auto& r : rep)
        if (r.method == method)
          v.push_back(r.estimate);
    return v;
  }
};

/// Runs `replicate(rng, r)` for r = 0..R-1 with streams split from the root
/// seed, in parallel, and aggregates bias, sd, RMSE and coverage per method.
/// Replications that throw are counted and excluded.
template <class F>
McTable mc_study(Index replications, std::uint64_t seed, F&& replicate)
{
  if (replications < 1)
    throw DomainError("mc_study: at least one replication is required");
  McTable t;
  const auto count = static_cast<std::size_t>(replications);
  t.records.resize(count);
  std::vector<std::string> errors(count);
  std::vector<char> failed(count, 0);
  const Rng root(seed);
  detail::parallel_for(count, [&](std::size_t r) {
    Rng rng = root.split(r);
    try {
      t.records[r] = replicate(rng, static_cast<Index>(r));
    } catch (const std::exception& e) {
      failed[r] = 1;
      errors[r] = e.what();
      t.records[r].clear();
    }
  });
  std::vector<std::string> order;
  std::map<std::string, std::vector<const McRecord*>> by_method;
  for (std::size_t r = 0; r < count; ++r) {
    if (failed[r]) {
      ++t.failures;
      t.failure_messages.push_back("replication " + std::to_string(r) + ": " + errors[r]);
      continue;
    }
    for (const auto& rec : t.records[r]) {
      if (!by_method.count(rec.method))
        order.push_back(rec.method);
      by_method[rec.method].push_back(&rec);
    }
  }
  for (const auto& m : order) {
    const auto& recs = by_method[m];
    McRow row;
    row.method = m;
    row.replications = static_cast<Index>(recs.size());
    const double rn = static_cast<double>(recs.size());
    double sum = 0.0, sq = 0.0;
    Index cov_n = 0, cov_hit = 0;
    for (const auto* rec : recs) {
      const double err = rec->estimate - rec->truth;
      sum += err;
      sq += err * err;
      if (rec->covered >= 0) {
        ++cov_n;
        cov_hit += rec->covered;
      }
    }
    row.bias = sum / rn;
    row.rmse = std::sqrt(sq / rn);
    if (recs.size() > 1) {
      double ss = 0.0;
      for (const auto* rec : recs) {
        const double dev = rec->estimate - rec->truth - row.bias;
        ss += dev * dev;
      }
      row.sd = std::sqrt(ss / (rn - 1.0));
    } else {
      row.sd = 0.0;
      row.sd_degenerate = true;
    }
    row.bias_se = row.sd / std::sqrt(rn);
    if (cov_n > 0)
      row.coverage = static_cast<double>(cov_hit) / static_cast<double>(cov_n);
    t.rows.push_back(row);
  }
  return t;
}

inline void write_mc_csv(std::ostream& out, const McTable& t,
                         const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  w.comment("failed replications: " + std::to_string(t.failures));
  w.row({ "method", "replications", "bias", "sd", "rmse", "bias_se", "coverage" });
  for (const auto& r : t.rows)
    w.row({ r.method, std::to_string(r.replications), csv::format_number(r.bias),
            csv::format_number(r.sd), csv::format_number(r.rmse), csv::format_number(r.bias_se),
            csv::format_number(r.coverage) });
}

// ---------------------------------------------------------------------------
// Oracles

struct OracleQr
{
  Vector coef;
  double objective = std::numeric_limits<double>::infinity();
};

/// Enumerates every basic solution (cols(W)-subsets of observations solved by
/// interpolation) and returns the one with least mean check loss; ties go to
/// the lexicographically smallest coefficient vector.
inline OracleQr oracle_qr(const Vector& y, const Matrix& w, double tau)
{
  check_tau(tau);
  const Index n = w.rows();
  const Index p = w.cols();
  if (n > 14 || p > 3 || p < 1)
    throw SizeError("oracle_qr: instance too large (needs N <= 14 and 1 <= cols <= 3)");
  if (n != y.size())
    throw DomainError("oracle_qr: size mismatch");
  OracleQr best;
  std::vector<Index> idx(static_cast<std::size_t>(p));
  std::function<void(Index, Index)> rec = [&](Index start, Index depth) {
    if (depth == p) {
      Matrix a(p, p);
      Vector b(p);
      for (Index j = 0; j < p; ++j) {
        a.row(j) = w.row(idx[static_cast<std::size_t>(j)]);
        b(j) = y(idx[static_cast<std::size_t>(j)]);
      }
      Eigen::FullPivLU<Matrix> lu(a);
      if (!lu.isInvertible())
        return;
      const Vector c = lu.solve(b);
      double loss = 0.0;
      for (Index i = 0; i < n; ++i) {
        const double r = y(i) - w.row(i).dot(c);
        loss += r * (tau - (r < 0.0 ? 1.0 : 0.0));
      }
      loss /= static_cast<double>(n);
      if (best.coef.size() == 0) {
        best.objective = loss;
        best.coef = c;
        return;
      }
      const double tol = 1e-12 * std::max(1.0, std::abs(best.objective));
      bool better = loss < best.objective - tol;
      if (!better && std::abs(loss - best.objective) <= tol)
        better = std::lexicographical_compare(c.data(), c.data() + p, best.coef.data(),
                                              best.coef.data() + p);
      if (better) {
        best.objective = std::min(loss, best.objective);
        best.coef = c;
      }
      return;
    }
    for (Index i = start; i < n; ++i) {
      idx[static_cast<std::size_t>(depth)] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  if (best.coef.size() == 0)
    throw DomainError("oracle_qr: design has no nonsingular basis");
  return best;
}

/// Sequential exhaustive grid evaluation of a GMM objective.
inline GridSearchResult oracle_gmm_grid(const GmmObjective& obj, const Grid& grid)
{
  if (grid.size() > 10'000'000)
    throw SizeError("oracle_gmm_grid: grid too large");
  GridSearchResult res;
  res.values.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    res.values[i] = obj(grid.node(i));
    if (i == 0 || res.values[i] < res.value) {
      res.value = res.values[i];
      res.index = i;
    }
  }
  res.best = grid.node(res.index);
  return res;
}

/// Exact law of m~ = (N^{-1/2} sum (tau - B_i) Psi_i)' Omega (...) with
/// B_i i.i.d. Bernoulli(tau), by enumeration of all 2^N outcomes. Returns
/// (value, probability) pairs sorted by value; equal values (within 1e-12
/// relative) are merged.
inline std::vector<std::pair<double, double>> oracle_bernoulli_exact(const Matrix& psi, double tau,
                                                                     const Matrix& omega)
{
  check_tau(tau);
  const Index n = psi.rows();
  if (n > 20)
    throw SizeError("oracle_bernoulli_exact: N must not exceed 20");
  const std::uint64_t total = std::uint64_t{ 1 } << n;
  std::vector<std::pair<double, double>> atoms;
  atoms.reserve(static_cast<std::size_t>(total));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  Vector g(psi.cols());
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    g.setZero();
    int ones = 0;
    for (Index i = 0; i < n; ++i) {
      const bool b = (mask >> i) & 1U;
      ones += b;
      g += (tau - (b ? 1.0 : 0.0)) * psi.row(i).transpose();
    }
    g *= scale;
    const double prob = std::pow(tau, ones) * std::pow(1.0 - tau, static_cast<double>(n - ones));
    atoms.emplace_back(g.dot(omega * g), prob);
  }
  std::sort(atoms.begin(), atoms.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& a : atoms) {
    if (!merged.empty() &&
        std::abs(a.first - merged.back().first) <= 1e-12 * std::max(1.0, std::abs(a.first)))
      merged.back().second += a.second;
    else
      merged.push_back(a);
  }
  return merged;
}

} // namespace ivqr
