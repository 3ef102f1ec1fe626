#include <gtest/gtest.h>

#include <ivqr/gmm.hpp>
#include <ivqr/robust.hpp>
#include <ivqr/simulation.hpp>

#include <algorithm>
#include <cmath>

using namespace ivqr;

namespace {

Dataset make_ds(const Vector& y, const Matrix& d, const Matrix& x, const Matrix& z)
{
  return Dataset(y, d, x, z);
}

// Objective recomputed from first principles, no library moment code.
double brute_objective(const Dataset& ds, const Vector& theta, double tau)
{
  const Index n = ds.n();
  const Index r = ds.m() + ds.k();
  Matrix psi(n, r);
  psi << ds.z(), ds.x();
  Vector g = Vector::Zero(r);
  Matrix ss = Matrix::Zero(r, r);
  for (Index i = 0; i < n; ++i) {
    double e = ds.y()(i);
    for (Index j = 0; j < ds.s(); ++j)
      e -= ds.d()(i, j) * theta(j);
    for (Index j = 0; j < ds.k(); ++j)
      e -= ds.x()(i, j) * theta(ds.s() + j);
    const double w = tau - (e <= 0.0 ? 1.0 : 0.0);
    g += w * psi.row(i).transpose();
    ss += psi.row(i).transpose() * psi.row(i);
  }
  g /= double(n);
  ss *= tau * (1 - tau) / double(n);
  return double(n) * g.dot(ss.inverse() * g);
}

} // namespace

TEST(MomentVector, SignCases)
{
  const Vector psi = (Vector(2) << 1.0, 2.0).finished();
  EXPECT_EQ(moment_vector(1.0, 0.5, psi), (Vector(2) << 0.5, 1.0).finished());
  EXPECT_EQ(moment_vector(-1.0, 0.5, psi), (Vector(2) << -0.5, -1.0).finished());
  const Vector one = Vector::Ones(1);
  EXPECT_NEAR(moment_vector(0.0, 0.3, one)(0), -0.7, 1e-15);
}

TEST(MomentVector, Bounded)
{
  Rng r(1);
  for (int t = 0; t < 200; ++t) {
    const double tau = r.uniform();
    Vector psi(3);
    for (int j = 0; j < 3; ++j)
      psi(j) = r.normal();
    const Vector g = moment_vector(r.normal(), tau, psi);
    for (int j = 0; j < 3; ++j)
      EXPECT_LE(std::abs(g(j)), std::max(tau, 1 - tau) * std::abs(psi(j)) + 1e-15);
  }
}

TEST(SampleMoments, AllResidualsPositive)
{
  Rng r(2);
  const Index n = 30;
  Matrix z(n, 1), x = Matrix::Ones(n, 1);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    z(i, 0) = r.normal();
    y(i) = 10.0 + r.uniform();
  }
  const Dataset ds = make_ds(y, Matrix::Zero(n, 1), x, z);
  const Vector g = sample_moments(ds, Vector::Zero(2), 0.3);
  EXPECT_NEAR(g(0), 0.3 * z.col(0).mean(), 1e-14);
  EXPECT_NEAR(g(1), 0.3, 1e-14);
}

TEST(SampleMoments, QuantileFitFirstOrderCondition)
{
  Rng r(3);
  const Index n = 301;
  Matrix x(n, 2);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = r.uniform(-1, 1);
    y(i) = x(i, 1) + r.normal();
  }
  const double tau = 0.4;
  const QRFit fit = fit_qr(y, x, tau);
  const Vector g = sample_moments_psi(x, y - x * fit.coef, tau);
  for (Index j = 0; j < 2; ++j)
    EXPECT_LE(std::abs(g(j)), 3.0 / double(n));
}

TEST(SampleMoments, CltBandAtTruth)
{
  int inside = 0;
  const double tau = 0.5;
  for (int s = 0; s < 100; ++s) {
    DgpDesign d;
    d.n = 10000;
    d.seed = 1000 + s;
    const SimSample sim = generate(d);
    const Vector g = sample_moments(sim.data, d.theta(tau), tau);
    const Matrix psi = instruments(sim.data, InstrumentRule::stacked_zx);
    bool ok = true;
    for (Index j = 0; j < g.size(); ++j) {
      // the moment's scale is the root mean square of the column (an
      // intercept has zero sd but unit second moment)
      const double rms = std::sqrt(psi.col(j).squaredNorm() / double(d.n));
      const double band = 3.0 * std::sqrt(tau * (1 - tau) / double(d.n)) * rms;
      ok = ok && std::abs(g(j)) <= band;
    }
    inside += ok;
  }
  EXPECT_GE(inside, 99);
}

TEST(DefaultWeight, ScalarCases)
{
  const Matrix psi = Matrix::Ones(7, 1);
  EXPECT_NEAR(default_weight_psi(psi, 0.5)(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(default_weight_psi(psi, 0.1)(0, 0), 1.0 / 0.09, 1e-9);
}

TEST(DefaultWeight, DuplicatedColumn)
{
  Rng r(4);
  Matrix psi(20, 3);
  for (Index i = 0; i < 20; ++i) {
    psi(i, 0) = r.normal();
    psi(i, 1) = 1.0;
    psi(i, 2) = psi(i, 0);
  }
  EXPECT_THROW(default_weight_psi(psi, 0.5), SingularityError);
  const Matrix ok = default_weight_psi(psi.leftCols(2), 0.5);
  EXPECT_TRUE(linalg::is_psd(ok, 1e-10));
}

TEST(Objective, ZeroAtPerfectFitAndNonnegative)
{
  Vector y(2);
  y << 1.0, -1.0;
  const Dataset ds = make_ds(y, Matrix::Zero(2, 1), Matrix::Ones(2, 1), Matrix(2, 0));
  const GmmObjective obj(ds, 0.5, InstrumentRule::stacked_zx);
  EXPECT_EQ(obj((Vector(2) << 0.0, 0.0).finished()), 0.0);

  DgpDesign d;
  d.n = 500;
  const SimSample sim = generate(d);
  const GmmObjective o2(sim.data, 0.5);
  Rng r(5);
  for (int t = 0; t < 50; ++t) {
    const Vector th = (Vector(2) << r.uniform(-2, 3), r.uniform(-2, 2)).finished();
    EXPECT_GE(o2(th), 0.0);
    EXPECT_NEAR(o2(th), brute_objective(sim.data, th, 0.5), 1e-8 * (1 + o2(th)));
  }
}

TEST(Objective, GridMinimumMatchesBruteForce)
{
  DgpDesign d;
  d.n = 300;
  d.seed = 11;
  const SimSample sim = generate(d);
  const GmmObjective obj(sim.data, 0.5);
  Box box{ (Vector(2) << 0.0, -1.0).finished(), (Vector(2) << 2.0, 1.0).finished() };
  SearchStrategy st;
  st.steps = { 0.01, 0.01 };
  const EstimateResult est = minimize_gmm(obj, box, st);

  double best = std::numeric_limits<double>::infinity();
  Vector arg;
  for (int i = 0; i <= 200; ++i)
    for (int j = 0; j <= 200; ++j) {
      const Vector th = (Vector(2) << 0.0 + 0.01 * i, -1.0 + 0.01 * j).finished();
      const double v = brute_objective(sim.data, th, 0.5);
      if (v < best - 1e-12) {
        best = v;
        arg = th;
      }
    }
  EXPECT_NEAR(est.objective, best, 1e-8 * (1 + best));
  EXPECT_NEAR(est.alpha_hat(0), arg(0), 1e-12);
  EXPECT_NEAR(est.beta_hat(0), arg(1), 1e-12);

  const GridSearchResult oracle = oracle_gmm_grid(obj, box.grid(st.steps));
  EXPECT_LE(oracle.value, est.objective);
}

TEST(Objective, ScaleInvariance)
{
  DgpDesign d;
  d.n = 400;
  const SimSample sim = generate(d);
  Matrix z2(d.n, 2);
  z2 << sim.data.z(), sim.data.x();
  const Dataset a = sim.data.with_z(z2);
  const Dataset b = sim.data.with_z(-3.7 * z2);
  const GmmObjective oa(a, 0.5, InstrumentRule::z_only);
  const GmmObjective ob(b, 0.5, InstrumentRule::z_only);
  Rng r(6);
  for (int t = 0; t < 20; ++t) {
    const Vector th = (Vector(2) << r.uniform(0, 2), r.uniform(-1, 1)).finished();
    EXPECT_NEAR(oa(th), ob(th), 1e-8 * std::max(1.0, oa(th)));
  }
}

TEST(Objective, OveridentifiedStochasticallyBounded)
{
  std::vector<double> vals;
  for (int s = 0; s < 200; ++s) {
    DgpDesign d;
    d.n = 1000;
    d.seed = 2000 + s;
    d.covariate_coef = { 0.5 };
    const SimSample sim = generate(d);
    Matrix z2(d.n, 2);
    z2.col(0) = sim.data.z().col(0);
    z2.col(1) = sim.data.z().col(0).cwiseProduct(sim.data.x().col(1));
    const Dataset ds = sim.data.with_z(z2);
    const GmmObjective obj(ds, 0.5);
    vals.push_back(obj(d.theta(0.5)));
  }
  std::nth_element(vals.begin(), vals.begin() + 100, vals.end());
  EXPECT_LE(vals[100], chi2_quantile(1, 0.99));
}

TEST(SurvivalKernel, Values)
{
  EXPECT_EQ(survival_kernel(0.0, 0.7), 0.5);
  EXPECT_GE(survival_kernel(-10 * 0.3, 0.3), 1 - 1e-15);
  EXPECT_LE(std::abs(survival_kernel(0.1, 0.001)), 1e-12);
  EXPECT_THROW(survival_kernel(0.1, -1.0), DomainError);
}

TEST(SmoothedMoments, LimitAndSymmetry)
{
  DgpDesign d;
  d.n = 200;
  const SimSample sim = generate(d);
  const Vector th = d.theta(0.5);
  const Vector e = residuals(sim.data, th);
  ASSERT_GT(e.cwiseAbs().minCoeff(), 1e-6);
  const Vector a = smoothed_sample_moments(sim.data, th, 0.5, 1e-8);
  const Vector b = sample_moments(sim.data, th, 0.5);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-10);

  const Index n = 10;
  const Dataset zero = make_ds(Vector::Zero(n), Matrix::Zero(n, 1), Matrix::Ones(n, 1),
                               Matrix::Ones(n, 1));
  const Vector g = smoothed_sample_moments(zero, Vector::Zero(2), 0.5, 0.3);
  EXPECT_NEAR(g.cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(SmoothedMoments, GradientMatchesFiniteDifferences)
{
  DgpDesign d;
  d.n = 500;
  d.seed = 3;
  const SimSample sim = generate(d);
  const double h = 0.2;
  const GmmObjective obj = GmmObjective(sim.data, 0.5).with_bandwidth(h);
  const Vector th = (Vector(2) << 0.8, 0.1).finished();
  const Vector grad = obj.gradient(th);
  for (Index j = 0; j < 2; ++j) {
    const double step = 1e-5;
    Vector p = th, m = th;
    p(j) += step;
    m(j) -= step;
    const double fd = (obj(p) - obj(m)) / (2 * step);
    EXPECT_NEAR(grad(j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(SmoothedObjective, ContinuousWhileUnsmoothedIsStepwise)
{
  DgpDesign d;
  d.n = 400;
  const SimSample sim = generate(d);
  const GmmObjective plain(sim.data, 0.5);
  const GmmObjective smooth = plain.with_bandwidth(default_smoothing_bandwidth(sim.data, 0.5));
  double max_jump_s = 0, max_jump_p = 0;
  int flat = 0;
  const double step = 1e-4;
  for (int i = 0; i < 2000; ++i) {
    const Vector a = (Vector(2) << 0.8 + i * step, 0.0).finished();
    const Vector b = (Vector(2) << 0.8 + (i + 1) * step, 0.0).finished();
    max_jump_s = std::max(max_jump_s, std::abs(smooth(a) - smooth(b)));
    max_jump_p = std::max(max_jump_p, std::abs(plain(a) - plain(b)));
    flat += plain(a) == plain(b);
  }
  EXPECT_GT(flat, 1000);
  EXPECT_LT(max_jump_s, 0.25 * max_jump_p);
}

TEST(MinimizeGmm, ExogenousDesignMatchesQr)
{
  DgpDesign d;
  d.n = 2000;
  d.rho = 0.0;
  d.seed = 8;
  const SimSample sim = generate(d);
  const Dataset ds = sim.data.with_z(sim.data.d());
  const GmmObjective obj(ds, 0.5);
  Box box{ (Vector(2) << 0.0, -1.0).finished(), (Vector(2) << 2.0, 1.0).finished() };
  SearchStrategy st;
  st.steps = { 0.01, 0.01 };
  const EstimateResult est = minimize_gmm(obj, box, st);
  const QRFit qr = fit_qr(ds.y(), regressors(ds), 0.5);
  EXPECT_LE(std::abs(est.alpha_hat(0) - qr.coef(0)), 0.02 + 1e-9);
}

TEST(MinimizeGmm, SingleNodeAndMultistart)
{
  DgpDesign d;
  d.n = 300;
  const SimSample sim = generate(d);
  const GmmObjective obj(sim.data, 0.5);
  Box one{ (Vector(2) << 0.7, 0.2).finished(), (Vector(2) << 0.7, 0.2).finished() };
  const EstimateResult e1 = minimize_gmm(obj, one);
  EXPECT_EQ(e1.alpha_hat(0), 0.7);
  EXPECT_EQ(e1.beta_hat(0), 0.2);

  const GmmObjective sm = obj.with_bandwidth(default_smoothing_bandwidth(sim.data, 0.5));
  Box box{ (Vector(2) << 0.0, -1.0).finished(), (Vector(2) << 2.0, 1.0).finished() };
  SearchStrategy ms;
  ms.kind = SearchKind::multistart;
  ms.steps = { 0.1, 0.1 };
  const EstimateResult e2 = minimize_gmm(sm, box, ms);
  const GridSearchResult coarse = grid_search(box.grid(ms.steps), [&](const Vector& t) { return sm(t); });
  EXPECT_LE(e2.objective, coarse.value);
  EXPECT_EQ(e2.method, "gmm-smoothed");
  EXPECT_THROW(minimize_gmm(obj, Box{ Vector(0), Vector(0) }), DomainError);
}
