#include <gtest/gtest.h>

#include <ivqr/iqr.hpp>
#include <ivqr/orthogonal.hpp>
#include <ivqr/robust.hpp>
#include <ivqr/simulation.hpp>

#include "../support/oracles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

using namespace ivqr;

namespace {

using oracle::lasso_by_enumeration;
using oracle::random_pd;

Dataset exact_fit(Index n, std::uint64_t seed, const Vector& a, const Vector& b)
{
  Rng r(seed);
  Matrix d(n, 1), x(n, 2), z(n, 1);
  for (Index i = 0; i < n; ++i) {
    d(i, 0) = r.bernoulli(0.5);
    x(i, 0) = 1.0;
    x(i, 1) = r.normal();
    z(i, 0) = r.normal();
  }
  const Vector y = d * a + x * b;
  return Dataset(y, d, x, z);
}

SimSample design_cov(Index n, std::uint64_t seed)
{
  DgpDesign d;
  d.n = n;
  d.seed = seed;
  d.covariate_coef = { 0.5 };
  return generate(d);
}

using oracle::median;

} // namespace

TEST(KernelJacobians, ZeroResidualsGiveConstantWeights)
{
  const Vector a = Vector::Constant(1, 0.7);
  Vector b(2);
  b << 0.2, -1.0;
  const Dataset ds = exact_fit(200, 1, a, b);
  const double h = 0.3;
  const KernelJacobians kj = kernel_jacobians(ds, 0.5, a, b, h);
  const double w = kernel::gaussian(0.0) / h / double(ds.n());
  const Matrix m = w * ds.z().transpose() * ds.x();
  const Matrix j = w * ds.x().transpose() * ds.x();
  EXPECT_LT((kj.M - m).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((kj.J - j).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(kernel_jacobians(ds, 0.5, a, b, 0.0), DomainError);
}

TEST(KernelJacobians, VanishAsBandwidthGrows)
{
  const SimSample s = design_cov(300, 2);
  const Vector th = s.design.theta(0.5);
  const KernelJacobians kj = kernel_jacobians(s.data, 0.5, th.head(1), th.tail(2), 1e12);
  EXPECT_LT(kj.M.cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_LT(kj.J.cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_TRUE(linalg::is_psd(kernel_jacobians(s.data, 0.5, th.head(1), th.tail(2), 0.2).J, 1e-12));
}

TEST(KernelJacobians, KnownErrorDensity)
{
  // Y = X'b + e, e ~ N(0, 1) independent of (X, Z): J -> phi(0) E[X X'].
  const Index n = 20000;
  Rng r(3);
  Matrix x(n, 2), z(n, 1);
  Vector y(n);
  Vector b(2);
  b << 1.0, 0.5;
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = r.normal();
    z(i, 0) = r.bernoulli(0.5);
    y(i) = x.row(i).dot(b) + r.normal();
  }
  const Dataset ds(y, Matrix::Zero(n, 1), x, z);
  const Vector e = y - x * b;
  const KernelJacobians kj =
    kernel_jacobians(ds, 0.5, Vector::Zero(1), b, kernel::residual_bandwidth(e));
  const Matrix target = kernel::gaussian(0.0) * x.transpose() * x / double(n);
  EXPECT_LE((kj.J - target).norm(), 0.15 * target.norm());
}

TEST(RegularizedDelta, UnpenalizedAndDominantPenalty)
{
  Rng r(4);
  for (int t = 0; t < 10; ++t) {
    const Matrix j = random_pd(4, r);
    Matrix m(2, 4);
    for (Index i = 0; i < m.size(); ++i)
      m(i) = r.normal();
    const DeltaResult d0 = regularized_delta(m, j, 0.0);
    EXPECT_LT((d0.delta - m * j.inverse()).cwiseAbs().maxCoeff(), 1e-6);
    const DeltaResult big = regularized_delta(m, j, m.cwiseAbs().maxCoeff());
    EXPECT_EQ(big.delta, Matrix::Zero(2, 4));
    EXPECT_EQ(big.nnz, 0);
  }
  EXPECT_THROW(regularized_delta(Matrix::Ones(1, 2), Matrix::Identity(2, 2), -1.0), DomainError);
}

TEST(RegularizedDelta, MatchesSignEnumeration)
{
  Rng r(5);
  for (int t = 0; t < 200; ++t) {
    const Matrix j = random_pd(2, r, 0.01);
    Matrix m(1, 2);
    m << r.normal(), r.normal();
    const double theta = r.uniform(0.0, 1.2) * m.cwiseAbs().maxCoeff();
    const DeltaResult res = regularized_delta(m, j, theta);
    const Vector oracle = lasso_by_enumeration(j, m.row(0).transpose(), theta);
    EXPECT_LT((res.delta.row(0).transpose() - oracle).cwiseAbs().maxCoeff(), 1e-6)
      << "instance " << t;
  }
}

TEST(RegularizedDelta, KktCertificate)
{
  Rng r(6);
  for (int t = 0; t < 40; ++t) {
    const Index k = 2 + Index(r.uniform() * 12);
    // half the instances rank deficient
    Matrix a(k, t % 2 ? k : k / 2);
    for (Index i = 0; i < a.size(); ++i)
      a(i) = r.normal();
    const Matrix j = a * a.transpose() / double(a.cols());
    // rows of M lie in the range of J, as kernel-weighted cross moments always do
    Matrix w(k, 3);
    for (Index i = 0; i < w.size(); ++i)
      w(i) = r.normal();
    const Matrix m = (j * w).transpose();
    const double theta = r.uniform(0.01, 0.5);
    const DeltaResult res = regularized_delta(m, j, theta);
    EXPECT_LE(res.kkt_residual, theta + 1e-8);
    const Matrix jp = j.completeOrthogonalDecomposition().pseudoInverse();
    double b2 = 1.0;
    for (Index row = 0; row < 3; ++row)
      b2 = std::max(b2, m.row(row).dot(jp * m.row(row).transpose()));
    EXPECT_LE(res.gap, 1e-8 * b2);
    for (Index row = 0; row < 3; ++row)
      EXPECT_LE((j * res.delta.row(row).transpose() - m.row(row).transpose()).cwiseAbs().maxCoeff(),
                theta + 1e-8);
  }
}

TEST(RegularizedDelta, DantzigForm)
{
  Rng r(7);
  for (int t = 0; t < 20; ++t) {
    const Matrix j = random_pd(5, r);
    Matrix m(1, 5);
    for (Index i = 0; i < 5; ++i)
      m(i) = r.normal();
    DeltaOptions dz;
    dz.dantzig = true;
    EXPECT_LT((regularized_delta(m, j, 0.0, dz).delta - regularized_delta(m, j, 0.0).delta)
                .cwiseAbs()
                .maxCoeff(),
              1e-8);
    const double theta = 0.3 * m.cwiseAbs().maxCoeff();
    const DeltaResult d = regularized_delta(m, j, theta, dz);
    const DeltaResult l = regularized_delta(m, j, theta);
    EXPECT_LE(d.kkt_residual, theta + 1e-8);
    // the penalised solution is feasible for the Dantzig program
    EXPECT_LE(d.delta.lpNorm<1>(), l.delta.lpNorm<1>() + 1e-8);
  }
}

TEST(RegularizedDelta, PathNnzNonincreasing)
{
  Rng r(8);
  for (int t = 0; t < 10; ++t) {
    // diagonal J: each coordinate is its own soft threshold, so the path is monotone
    Matrix j = Matrix::Zero(6, 6);
    for (Index i = 0; i < 6; ++i)
      j(i, i) = r.uniform(0.5, 2.0);
    Matrix m(2, 6);
    for (Index i = 0; i < m.size(); ++i)
      m(i) = r.normal();
    const PathCheck pc = delta_path_check(m, j, 1e-3, 5.0, 30);
    EXPECT_TRUE(pc.violations.empty());
    EXPECT_EQ(pc.nnz.back(), 0);
    for (std::size_t i = 0; i < pc.nnz.size(); ++i)
      EXPECT_EQ(pc.nnz[i], regularized_delta(m, j, pc.varthetas[i]).nnz);
  }
  for (int t = 0; t < 10; ++t) {
    const Matrix j = random_pd(6, r);
    Matrix m(1, 6);
    for (Index i = 0; i < 6; ++i)
      m(i) = r.normal();
    const PathCheck pc = delta_path_check(m, j, 1e-3, 10.0, 25);
    std::size_t rises = 0;
    for (std::size_t i = 1; i < pc.nnz.size(); ++i)
      rises += pc.nnz[i] > pc.nnz[i - 1];
    EXPECT_EQ(rises, pc.violations.size());
  }
  EXPECT_THROW(delta_path_check(Matrix::Ones(1, 1), Matrix::Ones(1, 1), 0.0, 1.0, 3), DomainError);
}

TEST(ConcentratedMoments, ZeroDeltaIsPlainMoments)
{
  const SimSample s = design_cov(500, 9);
  const Vector th = s.design.theta(0.5);
  const Vector g = concentrated_moments(s.data, 0.5, th.head(1), th.tail(2), Matrix::Zero(1, 2));
  // independent recomputation with Psi = Z
  double acc = 0;
  for (Index i = 0; i < s.data.n(); ++i) {
    const double e = s.data.y()(i) - s.data.d()(i, 0) * th(0) - s.data.x().row(i).dot(th.tail(2));
    acc += (0.5 - (e <= 0 ? 1.0 : 0.0)) * s.data.z()(i, 0);
  }
  EXPECT_NEAR(g(0), acc / double(s.data.n()), 1e-14);
}

TEST(ConcentratedMoments, AnnihilatedInstrument)
{
  SimSample s = design_cov(300, 10);
  Matrix delta(1, 2);
  delta << 0.3, -2.0;
  const Dataset ds = s.data.with_z(s.data.x() * delta.transpose());
  const Vector th = s.design.theta(0.5);
  const Vector g = concentrated_moments(ds, 0.5, th.head(1), th.tail(2), delta);
  EXPECT_EQ(g(0), 0.0);
}

TEST(ConcentratedMoments, CltBandAtTruth)
{
  const double tau = 0.5;
  const SimSample big = design_cov(400000, 11);
  const Vector th = big.design.theta(tau);
  const Vector e = big.data.y() - big.data.d() * th.head(1) - big.data.x() * th.tail(2);
  const KernelJacobians kj = kernel_jacobians(big.data, tau, th.head(1), th.tail(2),
                                              kernel::residual_bandwidth(e));
  const Matrix delta = kj.M * kj.J.inverse();
  int inside = 0;
  for (int s = 0; s < 100; ++s) {
    const SimSample sim = design_cov(2000, 12 + s);
    const Vector g = concentrated_moments(sim.data, tau, th.head(1), th.tail(2), delta);
    const Vector inst = sim.data.z().col(0) - sim.data.x() * delta.row(0).transpose();
    const double sd = std::sqrt((inst.array() - inst.mean()).square().sum() / double(inst.size() - 1));
    inside += std::abs(g(0)) <= 3 * std::sqrt(tau * (1 - tau) / 2000.0) * sd;
  }
  EXPECT_GE(inside, 99);
}

TEST(CovarianceKernel, GramProperties)
{
  const SimSample s = design_cov(400, 13);
  const OrthoScore s1 = ortho_score(s.data, 0.5, Vector::Constant(1, 0.8));
  const OrthoScore s2 = ortho_score(s.data, 0.5, Vector::Constant(1, 1.2));
  EXPECT_TRUE(linalg::is_psd(covariance_kernel(s1, s1), 1e-10));
  EXPECT_LT((covariance_kernel(s1, s2) - covariance_kernel(s2, s1).transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((s1.sigma - covariance_kernel(s1, s1)).cwiseAbs().maxCoeff(), 1e-15);

  // the functional form agrees with the profiled one
  const auto beta_fn = [&](const Vector& a) { return ortho_score(s.data, 0.5, a).beta_a; };
  const auto delta_fn = [&](const Vector& a) { return ortho_score(s.data, 0.5, a).delta_a; };
  const Matrix f = covariance_kernel(s.data, 0.5, s1.a, s2.a, beta_fn, delta_fn);
  EXPECT_LT((f - covariance_kernel(s1, s2)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(CovarianceKernel, KnownCovariance)
{
  Matrix c(2, 2);
  c << 1.0, 0.6, 0.6, 2.0;
  const Matrix l = c.llt().matrixL();
  Rng r(14);
  const Index n = 50000;
  Matrix g(n, 2);
  for (Index i = 0; i < n; ++i) {
    Vector v(2);
    v << r.normal(), r.normal();
    g.row(i) = (l * v).transpose();
  }
  EXPECT_LE((covariance_kernel(g, g) - c).cwiseAbs().maxCoeff(), 0.05);
}

TEST(OrthoScore, PlainProfilingAtZeroPenalty)
{
  const SimSample s = design_cov(600, 15);
  OrthoOptions o;
  o.vartheta = 0.0;
  const OrthoScore sc = ortho_score(s.data, 0.5, Vector::Constant(1, 1.0), o);
  EXPECT_LT((sc.delta_a - sc.M_hat * sc.J_hat.inverse()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(sc.beta_a, fit_qr(s.data.y() - s.data.d() * sc.a, s.data.x(), 0.5).coef);
  EXPECT_TRUE(linalg::is_psd(sc.J_hat, 1e-12));
  EXPECT_TRUE(linalg::is_psd(sc.sigma, 1e-12));
  EXPECT_EQ(sc.scores.rows(), s.data.n());
  EXPECT_EQ(sc.moments.size(), s.data.m());
  // default penalty follows the stated rule
  const OrthoScore d = ortho_score(s.data, 0.5, Vector::Constant(1, 1.0));
  EXPECT_NEAR(d.vartheta, 1.1 * d.M_hat.cwiseAbs().maxCoeff() * std::sqrt(std::log(2.0) / 600.0), 1e-15);
  EXPECT_THROW(ortho_score(s.data, 0.5, Vector::Zero(2)), DomainError);
}

TEST(CueEstimate, SinglePointAndCsv)
{
  const SimSample s = design_cov(300, 16);
  const CueResult r = cue_estimate(s.data, 0.5, Grid::linspace(0.9, 0.9, 1.0));
  EXPECT_EQ(r.estimate.alpha_hat(0), 0.9);
  EXPECT_EQ(r.estimate.method, "cue");
  EXPECT_EQ(r.estimate.notes.at("profiling"), "plain");
  EXPECT_TRUE(r.table[0].kkt_ok());
  std::ostringstream out;
  write_cue_csv(out, r.table);
  EXPECT_EQ(out.str().substr(0, 44), "a_1,kkt_residual,vartheta,nnz_delta,criterio");
}

TEST(CueEstimate, CloseToIqr)
{
  // Reduced replication count; the acceptance run uses 200.
  std::vector<double> diff;
  const Grid g = Grid::linspace(0.5, 1.5, 0.01);
  for (int s = 0; s < 15; ++s) {
    DgpDesign d;
    d.n = 2000;
    d.seed = 3000 + s;
    const SimSample sim = generate(d);
    const CueResult c = cue_estimate(sim.data, 0.5, g);
    for (const auto& p : c.table)
      EXPECT_TRUE(p.kkt_ok());
    const double iqr = estimate(sim.data, 0.5, g).estimate.alpha_hat(0);
    diff.push_back(std::abs(c.estimate.alpha_hat(0) - iqr));
  }
  EXPECT_LE(median(diff), 0.02 + 1e-9);
}

TEST(CueEstimate, HighDimensionalL1)
{
  DgpDesign d;
  d.n = 500;
  d.seed = 17;
  d.covariate_coef.assign(99, 0.0);
  for (int j = 0; j < 4; ++j)
    d.covariate_coef[std::size_t(j)] = 0.5;
  const SimSample sim = generate(d);
  OrthoOptions o;
  o.profiling = Profiling::l1;
  const CueResult r = cue_estimate(sim.data, 0.5, Grid::linspace(0.0, 2.0, 0.1), o);
  for (const auto& p : r.table) {
    EXPECT_TRUE(p.kkt_ok()) << p.error;
    EXPECT_GT(p.vartheta, 0.0);
  }
  EXPECT_EQ(r.estimate.notes.at("profiling"), "l1");
  EXPECT_LE(std::abs(r.estimate.alpha_hat(0) - 1.0), 0.5);
}

TEST(Orthogonality, FiniteDifferences)
{
  DgpDesign d;
  d.covariate_coef = { 0.5 };
  d.seed = 18;
  const OrthogonalityReport rep = orthogonality_check(d, 0.5, 0.05);
  EXPECT_EQ(rep.n, 50000);
  EXPECT_LE(rep.beta_derivative_orthogonal, 0.02 * rep.beta_derivative_plain);
  EXPECT_GE(rep.beta_derivative_plain, 5 * rep.beta_derivative_plain_se);
  EXPECT_LE(rep.delta_derivative, 3 * rep.delta_derivative_se);
}

TEST(Qlr2Region, AgreesWithQlrInLowDimension)
{
  const Grid g = Grid::linspace(0.4, 1.6, 0.05);
  std::size_t agree = 0, total = 0;
  for (int s = 0; s < 10; ++s) {
    const SimSample sim = design_cov(1000, 40 + s);
    OrthoOptions o;
    o.profiling = Profiling::l1;
    const ConfidenceRegion q2 = qlr2_region(sim.data, 0.5, g, 0.05, 500, 3 + s, o);
    const ConfidenceRegion q = qlr_region(sim.data, 0.5, g, 0.05, 500, 3 + s);
    EXPECT_EQ(q2.method, "qlr2");
    for (std::size_t i = 0; i < g.size(); ++i)
      agree += q.accept[i] == q2.accept[i];
    total += g.size();
  }
  EXPECT_GE(double(agree), 0.9 * double(total));
}

TEST(Qlr2Region, SingleDrawConvention)
{
  const SimSample sim = design_cov(300, 19);
  QlrDraws out;
  const ConfidenceRegion r = qlr2_region(sim.data, 0.5, Grid::linspace(0.5, 1.5, 0.25), 0.05, 1, 4, {}, &out);
  for (std::size_t j = 0; j < r.size(); ++j)
    EXPECT_EQ(r.critical[j], out.draws[j][0]);
}

// Instance where the interior point gap stalled just above its stop rule and
// the iterates underflowed to NaN on the next step.
TEST(FitQrL1, StalledInteriorPointReturnsFiniteFit)
{
  Rng rng = Rng(1112).split(55);
  DgpDesign d;
  d.n = 500;
  d.seed = rng.next_u64();
  d.covariate_coef.assign(99, 0.0);
  for (int c = 0; c < 4; ++c)
    d.covariate_coef[std::size_t(c)] = 0.5;
  const SimSample s = generate(d);
  const Vector ya = s.data.y() - 1.35 * s.data.d().col(0);
  const Vector psi = default_loadings(s.data.x());
  const double lambda = default_lambda(0.5, 99, s.data.n());
  const Vector b = fit_qr_l1(ya, s.data.x(), 0.5, lambda, psi);
  ASSERT_TRUE(b.allFinite());
  // penalised objective no worse than at zero slopes with the median intercept
  const auto obj = [&](const Vector& v) {
    const Vector r = ya - s.data.x() * v;
    double f = 0;
    for (Index i = 0; i < r.size(); ++i)
      f += r(i) * (0.5 - (r(i) <= 0 ? 1.0 : 0.0));
    return f / double(r.size()) + lambda * (psi.array() * v.array().abs()).sum();
  };
  Vector b0 = Vector::Zero(b.size());
  b0(0) = oracle::median(std::vector<double>(ya.data(), ya.data() + ya.size()));
  EXPECT_LE(obj(b), obj(b0) + 1e-9);
}
