#pragma once

// Inverse quantile regression: for each hypothesised a, regress Y - D'a on
// [X, Z] by quantile regression and measure how far the Z coefficients are
// from zero with a Wald statistic; the estimate minimises it over a grid.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "detail/parallel.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "quantreg.hpp"

namespace ivqr {

struct IqrProfile
{
  Vector a;
  Vector beta_a;
  Vector gamma_a;
  Matrix omega_a; ///< covariance of sqrt(N)(gamma_hat - gamma)
  double wald = std::numeric_limits<double>::infinity();
  double bandwidth = 0.0;
  std::string error; ///< nonempty when this grid point failed
  bool ok() const { return error.empty(); }
};

struct IqrOptions
{
  /// Bandwidth for the quantile-regression covariance; <= 0 selects the
  /// residual rule of thumb at each a.
  double h = 0.0;
};

inline IqrProfile profile(const Dataset& ds, double tau, const Vector& a,
                          const IqrOptions& opt = {})
{
  check_tau(tau);
  if (a.size() != ds.s())
    throw DomainError("profile: a has dimension " + std::to_string(a.size()) + ", expected " +
                      std::to_string(ds.s()));
  if (ds.m() == 0)
    throw DomainError("profile: at least one excluded instrument is required");
  const Index k = ds.k();
  const Index m = ds.m();
  Matrix w(ds.n(), k + m);
  w << ds.x(), ds.z();
  const Vector ya = ds.y() - ds.d() * a;
  QRFit fit = fit_qr(ya, w, tau);
  const double h = opt.h > 0.0 ? opt.h : kernel::residual_bandwidth(ya - w * fit.coef);
  const Matrix cov = qr_covariance(fit, ya, w, tau, h);
  IqrProfile p;
  p.a = a;
  p.beta_a = fit.coef.head(k);
  p.gamma_a = fit.coef.tail(m);
  p.omega_a = cov.bottomRightCorner(m, m);
  p.bandwidth = h;
  const Matrix oinv = linalg::inverse_spd(p.omega_a, "profile: instrument covariance block");
  p.wald = std::max(0.0, static_cast<double>(ds.n()) * p.gamma_a.dot(oinv * p.gamma_a));
  return p;
}

struct IqrResult
{
  EstimateResult estimate;
  std::vector<IqrProfile> table; ///< one entry per grid node, grid order
  Grid grid;
};

/// Profiles over every grid node (in parallel); failures are kept in the
/// table with an infinite statistic.
inline std::vector<IqrProfile> profile_grid(const Dataset& ds, double tau, const Grid& grid,
                                            const IqrOptions& opt = {})
{
  std::vector<IqrProfile> table(grid.size());
  detail::parallel_for(grid.size(), [&](std::size_t i) {
    const Vector a = grid.node(i);
    try {
      table[i] = profile(ds, tau, a, opt);
    } catch (const Error& e) {
      table[i] = IqrProfile{};
      table[i].a = a;
      table[i].error = e.what();
    }
  });
  return table;
}

inline IqrResult estimate(const Dataset& ds, double tau, const Grid& alpha_grid,
                          const IqrOptions& opt = {})
{
  check_tau(tau);
  if (alpha_grid.size() == 0)
    throw DomainError("estimate: empty alpha grid");
  if (alpha_grid.dim() != ds.s())
    throw DomainError("estimate: alpha grid dimension does not match the endogenous regressors");
  if (ds.s() > 3)
    throw DomainError("estimate: grid search supports at most 3 endogenous regressors; use the "
                      "multistart smoothed GMM path instead");
  IqrResult res;
  res.grid = alpha_grid;
  res.table = profile_grid(ds, tau, alpha_grid, opt);
  std::size_t best = res.table.size();
  std::string first_error;
  for (std::size_t i = 0; i < res.table.size(); ++i) {
    const auto& p = res.table[i];
    if (!p.ok()) {
      if (first_error.empty())
        first_error = p.error;
      continue;
    }
    if (best == res.table.size() || p.wald < res.table[best].wald)
      best = i;
  }
  if (best == res.table.size())
    throw Error("estimate: every grid point failed (first failure: " + first_error + ")");
  const IqrProfile& p = res.table[best];
  res.estimate.alpha_hat = p.a;
  res.estimate.beta_hat = p.beta_a;
  res.estimate.tau = tau;
  res.estimate.objective = p.wald;
  res.estimate.method = "iqr";
  res.estimate.notes["grid_nodes"] = std::to_string(alpha_grid.size());
  res.estimate.notes["grid_step"] = csv::format_number(alpha_grid.max_step());
  return res;
}

/// Sandwich variance of (alpha_hat, beta_hat) through the GMM representation
/// with instruments [Z, X]:
///   G = -(1/(N h)) sum K(e_i/h) Psi_i [D_i, X_i]',  Sigma = (1/N) sum g_i g_i',
///   V = (G' Sigma^{-1} G)^{-1} / N.
inline Matrix asymptotic_variance(const Dataset& ds, double tau, const Vector& alpha_hat,
                                  const Vector& beta_hat, double h = 0.0)
{
  check_tau(tau);
  Vector theta(alpha_hat.size() + beta_hat.size());
  theta << alpha_hat, beta_hat;
  const Vector e = residuals(ds, theta);
  if (!(h > 0.0))
    h = kernel::residual_bandwidth(e);
  const Matrix psi = instruments(ds, InstrumentRule::stacked_zx);
  const double n = static_cast<double>(ds.n());
  const Vector kw = kernel::weights(e, h);
  const Matrix g = -(psi.transpose() * kw.asDiagonal() * regressors(ds)) / (n * h);
  const Vector ind = e.unaryExpr([tau](double v) { return tau - (v <= 0.0 ? 1.0 : 0.0); });
  const Matrix scores = ind.asDiagonal() * psi;
  const Matrix sigma = scores.transpose() * scores / n;
  const Matrix sinv = linalg::inverse_spd(sigma, "asymptotic_variance: score covariance");
  const Matrix info = g.transpose() * sinv * g;
  const Matrix sym = 0.5 * (info + info.transpose());
  const double rc = linalg::rcond_symmetric(sym);
  if (!(rc > 1e-10)) {
    const double cond = rc > 0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    throw WeakIdentificationError(
      "asymptotic_variance: the moment Jacobian is (nearly) rank deficient (condition number " +
        std::to_string(cond) +
        "); identification looks weak, use the robust confidence sets (ar, qlr or finite-sample)",
      cond);
  }
  Matrix v = sym.ldlt().solve(Matrix::Identity(sym.rows(), sym.cols())) / n;
  return 0.5 * (v + v.transpose());
}

struct ProcessRow
{
  double tau = 0.5;
  std::optional<EstimateResult> estimate;
  std::string error;
};

inline std::vector<ProcessRow> coefficient_process(const Dataset& ds,
                                                   const std::vector<double>& tau_list,
                                                   const Grid& alpha_grid,
                                                   const IqrOptions& opt = {})
{
  for (std::size_t i = 0; i < tau_list.size(); ++i) {
    check_tau(tau_list[i]);
    if (i > 0 && !(tau_list[i] > tau_list[i - 1]))
      throw DomainError("coefficient_process: tau list must be strictly increasing");
  }
  std::vector<ProcessRow> rows;
  for (double tau : tau_list) {
    ProcessRow row;
    row.tau = tau;
    try {
      row.estimate = estimate(ds, tau, alpha_grid, opt).estimate;
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// CSV columns a_1..a_s, wald, gamma_1..gamma_m, beta_1..beta_k.
inline void write_profile_csv(std::ostream& out, const std::vector<IqrProfile>& table, Index s,
                              Index m, Index k, const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  std::vector<std::string> header;
  for (Index j = 0; j < s; ++j)
    header.push_back("a_" + std::to_string(j + 1));
  header.push_back("wald");
  for (Index j = 0; j < m; ++j)
    header.push_back("gamma_" + std::to_string(j + 1));
  for (Index j = 0; j < k; ++j)
    header.push_back("beta_" + std::to_string(j + 1));
  w.row(header);
  for (const auto& p : table) {
    std::vector<std::string> row;
    for (Index j = 0; j < s; ++j)
      row.push_back(csv::format_number(p.a(j)));
    row.push_back(csv::format_number(p.wald));
    for (Index j = 0; j < m; ++j)
      row.push_back(p.ok() ? csv::format_number(p.gamma_a(j)) : "nan");
    for (Index j = 0; j < k; ++j)
      row.push_back(p.ok() ? csv::format_number(p.beta_a(j)) : "nan");
    w.row(row);
  }
}

} // namespace ivqr
