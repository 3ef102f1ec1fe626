#pragma once

// Orthogonal (concentrated) scores for the endogenous coefficients:
//   g_i(a) = (tau - 1{Y_i - D_i'a - X_i'beta(a) <= 0}) (Z_i - delta(a) X_i),
// with delta(a) solving the kernel-weighted projection of Z on X, optionally
// l1-regularised. Used for CUE estimation, conditional QLR inference and the
// high-dimensional profiling path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "detail/parallel.hpp"
#include "detail/simplex.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "quantreg.hpp"
#include "rng.hpp"
#include "simulation.hpp"

namespace ivqr {

struct KernelJacobians
{
  Matrix M; ///< m x k: (1/(N h)) sum Z_i X_i' K(e_i/h)
  Matrix J; ///< k x k: (1/(N h)) sum X_i X_i' K(e_i/h)
};

inline KernelJacobians kernel_jacobians(const Dataset& ds, double tau, const Vector& a,
                                        const Vector& beta_a, double h)
{
  check_tau(tau);
  if (!(h > 0.0))
    throw DomainError("kernel_jacobians: bandwidth must be positive");
  const Vector e = ds.y() - ds.d() * a - ds.x() * beta_a;
  const Vector kw = kernel::weights(e, h);
  const double scale = 1.0 / (static_cast<double>(ds.n()) * h);
  KernelJacobians out;
  out.M = scale * (ds.z().transpose() * kw.asDiagonal() * ds.x());
  out.J = scale * (ds.x().transpose() * kw.asDiagonal() * ds.x());
  out.J = 0.5 * (out.J + out.J.transpose());
  return out;
}

struct DeltaOptions
{
  bool dantzig = false;
  double gap_tol = 1e-8; ///< relative to max(1, M' J^+ M)
  int max_sweeps = 200000;
};

struct DeltaResult
{
  Matrix delta;              ///< m x k
  double kkt_residual = 0.0; ///< max_j ||J delta_j - M_j||_inf
  double gap = 0.0;          ///< largest duality gap over rows (penalised form)
  Index nnz = 0;
  int sweeps = 0;
};

namespace detail {

inline double soft_threshold(double v, double t)
{
  return v > t ? v - t : (v < -t ? v + t : 0.0);
}

/// Duality gap of min 1/2 d'Jd - m'd + t||d||_1 at d.
inline double l1_gap(const Matrix& j, const Vector& mj, double bnorm2, double t, const Vector& d)
{
  const Vector jd = j * d;
  const double rho2 = std::max(0.0, bnorm2 - 2.0 * mj.dot(d) + d.dot(jd));
  const double grad = (mj - jd).cwiseAbs().maxCoeff();
  const double c = grad > t ? t / grad : 1.0;
  return 0.5 * (1.0 + c * c) * rho2 + t * d.cwiseAbs().sum() - c * (bnorm2 - mj.dot(d));
}

/// Coordinate descent for one row; returns the number of sweeps used.
inline int lasso_row(const Matrix& j, const Vector& mj, double t, double bnorm2, double tol,
                     int max_sweeps, Vector& d, double& gap)
{
  const Index k = j.rows();
  Vector grad = j * d - mj; // gradient of the smooth part
  int sweep = 0;
  gap = l1_gap(j, mj, bnorm2, t, d);
  while (gap > tol && sweep < max_sweeps) {
    ++sweep;
    for (Index l = 0; l < k; ++l) {
      const double jll = j(l, l);
      double nv;
      if (jll <= 0.0) {
        const double c = -(grad(l) - jll * d(l));
        if (std::abs(c) > t)
          throw SolverError("regularized_delta: penalised problem is unbounded", d, gap);
        nv = 0.0;
      } else {
        const double c = jll * d(l) - grad(l); // m_l - sum_{s != l} J_ls d_s
        nv = soft_threshold(c, t) / jll;
      }
      const double step = nv - d(l);
      if (step != 0.0) {
        grad += step * j.col(l);
        d(l) = nv;
      }
    }
    if (sweep % 5 == 0 || sweep < 5)
      gap = l1_gap(j, mj, bnorm2, t, d);
  }
  gap = l1_gap(j, mj, bnorm2, t, d);
  return sweep;
}

/// Exact re-solve on the support of a coordinate-descent solution: with the
/// signs fixed the stationarity conditions are linear. Kept only when signs,
/// inactive-set KKT conditions and the objective all check out.
inline void polish_lasso_row(const Matrix& j, const Vector& mj, double t, Vector& d)
{
  std::vector<Index> sup;
  for (Index l = 0; l < d.size(); ++l)
    if (d(l) != 0.0)
      sup.push_back(l);
  if (sup.empty())
    return;
  const auto f = static_cast<Index>(sup.size());
  Matrix js(f, f);
  Vector rhs(f);
  for (Index a = 0; a < f; ++a) {
    const Index la = sup[static_cast<std::size_t>(a)];
    rhs(a) = mj(la) - t * (d(la) > 0.0 ? 1.0 : -1.0);
    for (Index b = 0; b < f; ++b)
      js(a, b) = j(la, sup[static_cast<std::size_t>(b)]);
  }
  const Eigen::FullPivLU<Matrix> lu(js);
  if (lu.rank() < f)
    return;
  const Vector ds = lu.solve(rhs);
  Vector dn = Vector::Zero(d.size());
  for (Index a = 0; a < f; ++a) {
    const Index la = sup[static_cast<std::size_t>(a)];
    if (!std::isfinite(ds(a)) || ds(a) * d(la) <= 0.0)
      return;
    dn(la) = ds(a);
  }
  const Vector g = j * dn - mj;
  for (Index l = 0; l < d.size(); ++l)
    if (dn(l) == 0.0 && std::abs(g(l)) > t + 1e-12 * (1.0 + t))
      return;
  const auto obj = [&](const Vector& v) { return 0.5 * v.dot(j * v) - mj.dot(v) + t * v.lpNorm<1>(); };
  if (obj(dn) <= obj(d) + 1e-12 * (1.0 + std::abs(obj(d))))
    d = dn;
}

/// Dantzig form: min ||d||_1 subject to ||J d - m||_inf <= t, as an LP in
/// d = p - q with slacks, solved exactly by the simplex method.
inline Vector dantzig_row(const Matrix& j, const Vector& mj, double t)
{
  const Index k = j.rows();
  Matrix a = Matrix::Zero(2 * k, 4 * k);
  a.block(0, 0, k, k) = j;
  a.block(0, k, k, k) = -j;
  a.block(0, 2 * k, k, k) = Matrix::Identity(k, k);
  a.block(k, 0, k, k) = -j;
  a.block(k, k, k, k) = j;
  a.block(k, 3 * k, k, k) = Matrix::Identity(k, k);
  Vector b(2 * k);
  b << mj + Vector::Constant(k, t), Vector::Constant(k, t) - mj;
  Vector c = Vector::Zero(4 * k);
  c.head(2 * k).setOnes();
  const double scale = std::max(1.0, j.cwiseAbs().maxCoeff());
  const SimplexResult lp = simplex_min(a, b, c, 1e-11 * scale);
  if (!lp.feasible)
    throw SolverError("regularized_delta: Dantzig constraints are infeasible (M outside the range of J)", Vector());
  if (!lp.bounded)
    throw SolverError("regularized_delta: Dantzig program is unbounded", Vector());
  return lp.x.head(k) - lp.x.segment(k, k);
}

} // namespace detail

/// Row-wise l1-regularised solution of delta J = M:
///   delta_j = argmin 1/2 d'Jd - M_j d + vartheta ||d||_1
/// (or the Dantzig form min ||d||_1 s.t. ||J d - M_j||_inf <= vartheta).
inline DeltaResult regularized_delta(const Matrix& m_hat, const Matrix& j_hat, double vartheta,
                                     const DeltaOptions& opt = {})
{
  if (!(vartheta >= 0.0))
    throw DomainError("regularized_delta: penalty must be nonnegative");
  const Index k = j_hat.rows();
  if (j_hat.cols() != k || m_hat.cols() != k)
    throw DomainError("regularized_delta: dimension mismatch");
  const Matrix j = 0.5 * (j_hat + j_hat.transpose());
  DeltaResult res;
  res.delta = Matrix::Zero(m_hat.rows(), k);
  if (k == 0)
    return res;
  Eigen::SelfAdjointEigenSolver<Matrix> es(j);
  const Vector ev = es.eigenvalues();
  const double evmax = std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  Vector evinv(k);
  for (Index l = 0; l < k; ++l)
    evinv(l) = ev(l) > 1e-12 * evmax ? 1.0 / ev(l) : 0.0;
  const Matrix jpinv = es.eigenvectors() * evinv.asDiagonal() * es.eigenvectors().transpose();
  const bool nonsingular = evmax > 0.0 && ev.minCoeff() > 1e-12 * evmax;

  for (Index r = 0; r < m_hat.rows(); ++r) {
    const Vector mj = m_hat.row(r).transpose();
    const double bnorm2 = std::max(0.0, mj.dot(jpinv * mj));
    const double tol = opt.gap_tol * std::max(1.0, bnorm2);
    Vector d = Vector::Zero(k);
    double gap = 0.0;
    if (mj.cwiseAbs().maxCoeff() <= vartheta) {
      d.setZero(); // zero satisfies the optimality conditions
    } else if (vartheta == 0.0 && nonsingular) {
      d = j.ldlt().solve(mj);
    } else if (opt.dantzig) {
      d = detail::dantzig_row(j, mj, vartheta);
    } else {
      res.sweeps += detail::lasso_row(j, mj, vartheta, bnorm2, tol, opt.max_sweeps, d, gap);
      if (gap > tol)
        throw SolverError("regularized_delta: coordinate descent did not reach the gap tolerance",
                          d, gap);
      detail::polish_lasso_row(j, mj, vartheta, d);
    }
    if (!opt.dantzig)
      res.gap = std::max(res.gap, detail::l1_gap(j, mj, bnorm2, vartheta, d));
    res.kkt_residual = std::max(res.kkt_residual, (j * d - mj).cwiseAbs().maxCoeff());
    res.delta.row(r) = d.transpose();
  }
  for (Index r = 0; r < res.delta.rows(); ++r)
    for (Index l = 0; l < k; ++l)
      res.nnz += res.delta(r, l) != 0.0;
  return res;
}

/// Default penalty 1.1 * ||M||_inf * sqrt(log(k) / N).
inline double default_vartheta(const Matrix& m_hat, Index k, Index n)
{
  if (k <= 1 || m_hat.size() == 0)
    return 0.0;
  return 1.1 * m_hat.cwiseAbs().maxCoeff() *
         std::sqrt(std::log(static_cast<double>(k)) / static_cast<double>(n));
}

/// Per-observation concentrated scores (N x m).
inline Matrix concentrated_scores(const Dataset& ds, double tau, const Vector& a,
                                  const Vector& beta_a, const Matrix& delta_a)
{
  const Vector e = ds.y() - ds.d() * a - ds.x() * beta_a;
  const Vector ind = e.unaryExpr([tau](double v) { return tau - (v <= 0.0 ? 1.0 : 0.0); });
  const Matrix inst = ds.z() - ds.x() * delta_a.transpose();
  return ind.asDiagonal() * inst;
}

inline Vector concentrated_moments(const Dataset& ds, double tau, const Vector& a,
                                   const Vector& beta_a, const Matrix& delta_a)
{
  const Matrix g = concentrated_scores(ds, tau, a, beta_a, delta_a);
  return g.colwise().mean().transpose();
}

/// Uncentered cross-covariance of two score matrices: G1'G2 / N.
inline Matrix covariance_kernel(const Matrix& scores1, const Matrix& scores2)
{
  if (scores1.rows() != scores2.rows())
    throw DomainError("covariance_kernel: score matrices have different row counts");
  return scores1.transpose() * scores2 / static_cast<double>(scores1.rows());
}

enum class Profiling
{
  plain,
  l1
};

inline std::string to_string(Profiling p)
{
  return p == Profiling::plain ? "plain" : "l1";
}

struct OrthoOptions
{
  Profiling profiling = Profiling::plain;
  double h = 0.0;          ///< kernel bandwidth; <= 0 selects the residual rule at each a
  double vartheta = -1.0;  ///< delta penalty; < 0 selects the default rule
  double lambda = -1.0;    ///< l1 profiling penalty; < 0 selects the default rule
  std::optional<Vector> psi; ///< l1 penalty loadings; default column sd (0 for constant columns)
  bool dantzig = false;
};

/// Default l1 profiling penalty 1.1 sqrt(tau(1-tau)) Phi^{-1}(1 - 0.1/(2p)) / sqrt(N),
/// p the number of penalised columns.
inline double default_lambda(double tau, Index penalised, Index n)
{
  const double p = static_cast<double>(std::max<Index>(penalised, 1));
  return 1.1 * std::sqrt(tau * (1.0 - tau)) * normal_quantile(1.0 - 0.1 / (2.0 * p)) /
         std::sqrt(static_cast<double>(n));
}

inline Vector default_loadings(const Matrix& x)
{
  Vector psi(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double sd = linalg::sample_sd(x.col(j));
    psi(j) = sd > 1e-12 ? sd : 0.0;
  }
  return psi;
}

struct OrthoScore
{
  Vector a;
  Vector beta_a;
  Matrix delta_a;
  Matrix M_hat;
  Matrix J_hat;
  Vector moments; ///< concentrated g_N(a)
  Matrix sigma;   ///< Sigma(a, a)
  Matrix scores;  ///< N x m per-observation scores
  double kkt_residual = 0.0;
  Index nnz = 0;
  double h = 0.0;
  double vartheta = 0.0;
  double lambda = 0.0;
};

/// Profile -> kernel Jacobians -> delta -> concentrated scores at a.
inline OrthoScore ortho_score(const Dataset& ds, double tau, const Vector& a,
                              const OrthoOptions& opt = {})
{
  check_tau(tau);
  if (a.size() != ds.s())
    throw DomainError("ortho_score: a has the wrong dimension");
  OrthoScore sc;
  sc.a = a;
  const Vector ya = ds.y() - ds.d() * a;
  if (opt.profiling == Profiling::plain) {
    sc.beta_a = fit_qr(ya, ds.x(), tau).coef;
  } else {
    const Vector psi = opt.psi ? *opt.psi : default_loadings(ds.x());
    Index pen = 0;
    for (Index j = 0; j < psi.size(); ++j)
      pen += psi(j) > 0.0;
    sc.lambda = opt.lambda >= 0.0 ? opt.lambda : default_lambda(tau, pen, ds.n());
    sc.beta_a = fit_qr_l1(ya, ds.x(), tau, sc.lambda, psi);
  }
  const Vector e = ya - ds.x() * sc.beta_a;
  sc.h = opt.h > 0.0 ? opt.h : kernel::residual_bandwidth(e);
  const KernelJacobians kj = kernel_jacobians(ds, tau, a, sc.beta_a, sc.h);
  sc.M_hat = kj.M;
  sc.J_hat = kj.J;
  sc.vartheta = opt.vartheta >= 0.0 ? opt.vartheta : default_vartheta(kj.M, ds.k(), ds.n());
  DeltaOptions dopt;
  dopt.dantzig = opt.dantzig;
  const DeltaResult dr = regularized_delta(kj.M, kj.J, sc.vartheta, dopt);
  sc.delta_a = dr.delta;
  sc.kkt_residual = dr.kkt_residual;
  sc.nnz = dr.nnz;
  sc.scores = concentrated_scores(ds, tau, a, sc.beta_a, sc.delta_a);
  sc.moments = sc.scores.colwise().mean().transpose();
  sc.sigma = covariance_kernel(sc.scores, sc.scores);
  return sc;
}

/// Sigma(a1, a2) for two profiled points.
inline Matrix covariance_kernel(const OrthoScore& s1, const OrthoScore& s2)
{
  return covariance_kernel(s1.scores, s2.scores);
}

/// Sigma(a1, a2) with profiling supplied as functions a -> beta(a), a -> delta(a).
inline Matrix covariance_kernel(const Dataset& ds, double tau, const Vector& a1, const Vector& a2,
                                const std::function<Vector(const Vector&)>& beta_fn,
                                const std::function<Matrix(const Vector&)>& delta_fn)
{
  return covariance_kernel(concentrated_scores(ds, tau, a1, beta_fn(a1), delta_fn(a1)),
                           concentrated_scores(ds, tau, a2, beta_fn(a2), delta_fn(a2)));
}

/// N g' Sigma^{-1} g with a ridge when Sigma is near singular.
inline double cue_criterion(const OrthoScore& sc, Index n, bool* regularized = nullptr)
{
  bool reg = false;
  const Matrix inv = linalg::inverse_ridge(sc.sigma, reg);
  if (regularized)
    *regularized = reg;
  return std::max(0.0, static_cast<double>(n) * sc.moments.dot(inv * sc.moments));
}

struct CuePoint
{
  Vector a;
  double criterion = std::numeric_limits<double>::infinity();
  double kkt_residual = 0.0;
  double vartheta = 0.0;
  Index nnz = 0;
  bool regularized = false;
  std::string error;

  /// KKT certificate ||delta_j' J - M_j||_inf <= vartheta + 1e-8.
  bool kkt_ok() const { return error.empty() && kkt_residual <= vartheta + 1e-8; }
};

struct CueResult
{
  EstimateResult estimate;
  std::vector<CuePoint> table;
};

inline CueResult cue_estimate(const Dataset& ds, double tau, const Grid& alpha_grid,
                              const OrthoOptions& opt = {})
{
  check_tau(tau);
  if (alpha_grid.size() == 0)
    throw DomainError("cue_estimate: empty grid");
  if (alpha_grid.dim() != ds.s())
    throw DomainError("cue_estimate: grid dimension does not match the endogenous regressors");
  CueResult res;
  res.table.resize(alpha_grid.size());
  std::vector<Vector> betas(alpha_grid.size());
  detail::parallel_for(alpha_grid.size(), [&](std::size_t i) {
    CuePoint& pt = res.table[i];
    pt.a = alpha_grid.node(i);
    try {
      const OrthoScore sc = ortho_score(ds, tau, pt.a, opt);
      pt.criterion = cue_criterion(sc, ds.n(), &pt.regularized);
      pt.kkt_residual = sc.kkt_residual;
      pt.vartheta = sc.vartheta;
      pt.nnz = sc.nnz;
      betas[i] = sc.beta_a;
    } catch (const Error& e) {
      pt.error = e.what();
    }
  });
  std::size_t best = res.table.size();
  bool any_reg = false;
  for (std::size_t i = 0; i < res.table.size(); ++i) {
    any_reg = any_reg || res.table[i].regularized;
    if (!res.table[i].error.empty())
      continue;
    if (best == res.table.size() || res.table[i].criterion < res.table[best].criterion)
      best = i;
  }
  if (best == res.table.size())
    throw Error("cue_estimate: every grid point failed (first failure: " + res.table[0].error + ")");
  res.estimate.alpha_hat = res.table[best].a;
  res.estimate.beta_hat = betas[best];
  res.estimate.tau = tau;
  res.estimate.objective = res.table[best].criterion;
  res.estimate.method = "cue";
  res.estimate.notes["profiling"] = to_string(opt.profiling);
  res.estimate.notes["delta_form"] = opt.dantzig ? "dantzig" : "penalized";
  if (any_reg)
    res.estimate.notes["sigma_regularized"] = "true";
  return res;
}

/// CSV columns a_1..a_s, kkt_residual, nnz_delta, criterion.
inline void write_cue_csv(std::ostream& out, const std::vector<CuePoint>& table,
                          const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  const Index s = table.empty() ? 0 : table.front().a.size();
  std::vector<std::string> header;
  for (Index j = 0; j < s; ++j)
    header.push_back("a_" + std::to_string(j + 1));
  header.insert(header.end(), { "kkt_residual", "vartheta", "nnz_delta", "criterion" });
  w.row(header);
  for (const auto& p : table) {
    std::vector<std::string> row;
    for (Index j = 0; j < s; ++j)
      row.push_back(csv::format_number(p.a(j)));
    row.push_back(csv::format_number(p.kkt_residual));
    row.push_back(csv::format_number(p.vartheta));
    row.push_back(std::to_string(p.nnz));
    row.push_back(csv::format_number(p.criterion));
    w.row(row);
  }
}

struct PathCheck
{
  std::vector<double> varthetas;
  std::vector<Index> nnz;
  std::vector<std::string> violations; ///< nnz increased between consecutive penalties
};

/// nnz(delta) along an increasing logarithmic penalty grid.
inline PathCheck delta_path_check(const Matrix& m_hat, const Matrix& j_hat, double lo, double hi,
                                  int points)
{
  if (!(lo > 0.0 && hi > lo && points >= 2))
    throw DomainError("delta_path_check: need 0 < lo < hi and at least two points");
  PathCheck pc;
  for (int i = 0; i < points; ++i) {
    const double t = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
    pc.varthetas.push_back(t);
    pc.nnz.push_back(regularized_delta(m_hat, j_hat, t).nnz);
    if (i > 0 && pc.nnz.back() > pc.nnz[pc.nnz.size() - 2])
      pc.violations.push_back("nnz rose from " + std::to_string(pc.nnz[pc.nnz.size() - 2]) +
                              " to " + std::to_string(pc.nnz.back()) + " at vartheta=" +
                              csv::format_number(t));
  }
  return pc;
}

struct OrthogonalityReport
{
  double beta_derivative_orthogonal = 0.0; ///< max |d/dt mean score| over beta directions
  double beta_derivative_orthogonal_se = 0.0;
  double beta_derivative_plain = 0.0;      ///< same for the plain instrument Z
  double beta_derivative_plain_se = 0.0;
  double delta_derivative = 0.0;           ///< max |d/dt| over delta directions
  double delta_derivative_se = 0.0;
  Matrix delta_true;
  Index n = 0;
};

struct OrthogonalityOptions
{
  Index n = 50000;
  Index oracle_n = 2000000; ///< sample used to evaluate delta at the truth
  int directions = 10;
  std::uint64_t seed = 1;
};

/// Central finite differences of the mean concentrated score at the truth, in
/// random directions of beta and delta, for a simulated design.
inline OrthogonalityReport orthogonality_check(DgpDesign design, double tau,
                                               double perturbation_scale,
                                               const OrthogonalityOptions& opt = {})
{
  check_tau(tau);
  if (!(perturbation_scale > 0.0))
    throw DomainError("orthogonality_check: perturbation scale must be positive");
  const Vector theta = design.theta(tau);
  const Vector a0 = theta.head(1);
  const Vector b0 = theta.tail(theta.size() - 1);

  // delta at the truth from a large independent sample.
  DgpDesign big = design;
  big.n = opt.oracle_n;
  big.seed = design.seed ^ 0x9E3779B97F4A7C15ULL;
  const SimSample oracle = generate(big);
  const double h_oracle =
    kernel::rule_of_thumb(oracle.data.y() - oracle.data.d() * a0 - oracle.data.x() * b0, 0.2) * 0.5;
  const KernelJacobians kj = kernel_jacobians(oracle.data, tau, a0, b0, h_oracle);
  const Matrix delta0 = kj.M * linalg::inverse_spd(kj.J, "orthogonality_check: J");

  design.n = opt.n;
  const SimSample s = generate(design);
  const Dataset& ds = s.data;
  const Index k = ds.k();
  const Index m = ds.m();
  const double n = static_cast<double>(ds.n());
  const double t = perturbation_scale;
  Rng rng(opt.seed);

  OrthogonalityReport rep;
  rep.delta_true = delta0;
  rep.n = ds.n();
  const Matrix inst_orth = ds.z() - ds.x() * delta0.transpose();
  auto fd_stats = [&](const Matrix& inst, const Vector& dir, double& value, double& se) {
    const Vector ep = ds.y() - ds.d() * a0 - ds.x() * (b0 + t * dir);
    const Vector em = ds.y() - ds.d() * a0 - ds.x() * (b0 - t * dir);
    // Per-observation finite difference of (tau - 1{e <= 0}) psi.
    Matrix per(ds.n(), m);
    for (Index i = 0; i < ds.n(); ++i) {
      const double diff = ((ep(i) <= 0.0 ? -1.0 : 0.0) - (em(i) <= 0.0 ? -1.0 : 0.0)) / (2.0 * t);
      per.row(i) = diff * inst.row(i);
    }
    const Vector mean = per.colwise().mean().transpose();
    Index arg = 0;
    value = mean.cwiseAbs().maxCoeff(&arg);
    const Vector col = per.col(arg);
    const double sd = std::sqrt((col.array() - col.mean()).square().sum() / (n - 1.0));
    se = sd / std::sqrt(n);
  };
  for (int r = 0; r < opt.directions; ++r) {
    Vector dir(k);
    for (Index j = 0; j < k; ++j)
      dir(j) = rng.normal();
    dir /= dir.norm();
    double v = 0.0, se = 0.0;
    fd_stats(inst_orth, dir, v, se);
    if (v >= rep.beta_derivative_orthogonal) {
      rep.beta_derivative_orthogonal = v;
      rep.beta_derivative_orthogonal_se = se;
    }
    fd_stats(ds.z(), dir, v, se);
    if (v >= rep.beta_derivative_plain) {
      rep.beta_derivative_plain = v;
      rep.beta_derivative_plain_se = se;
    }
  }
  // delta directions: the score is linear in delta, so the central difference
  // is exact: d/dt mean (tau - 1{e <= 0})(Z - (delta0 + t D) X) = -mean(ind * D X).
  const Vector e0 = ds.y() - ds.d() * a0 - ds.x() * b0;
  const Vector ind = e0.unaryExpr([tau](double v) { return tau - (v <= 0.0 ? 1.0 : 0.0); });
  for (int r = 0; r < opt.directions; ++r) {
    Matrix dir(m, k);
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < k; ++j)
        dir(i, j) = rng.normal();
    dir /= dir.norm();
    const Matrix per = -(ind.asDiagonal() * (ds.x() * dir.transpose()));
    const Vector mean = per.colwise().mean().transpose();
    Index arg = 0;
    const double v = mean.cwiseAbs().maxCoeff(&arg);
    const Vector col = per.col(arg);
    const double sd = std::sqrt((col.array() - col.mean()).square().sum() / (n - 1.0));
    if (v >= rep.delta_derivative) {
      rep.delta_derivative = v;
      rep.delta_derivative_se = sd / std::sqrt(n);
    }
  }
  return rep;
}

} // namespace ivqr
