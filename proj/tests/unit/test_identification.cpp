#include <gtest/gtest.h>

#include <ivqr/identification.hpp>
#include <ivqr/simulation.hpp>

#include <cmath>
#include <limits>
#include <sstream>

using namespace ivqr;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

SimSample sample(char name, Index n, std::uint64_t seed)
{
  DgpDesign d;
  d.name = name;
  d.n = n;
  d.seed = seed;
  return generate(d);
}

// Placebo: Z drawn independently of (Y, D).
Dataset placebo(const Dataset& ds, std::uint64_t seed)
{
  Rng r(seed);
  Matrix z(ds.n(), 1);
  for (Index i = 0; i < ds.n(); ++i)
    z(i, 0) = r.bernoulli(0.5);
  return ds.with_z(z);
}

} // namespace

TEST(PiMap, SureAndNullEvents)
{
  const SimSample s = sample('A', 500, 1);
  const Vector hi = pi_map(s.data, 0.3, inf, inf);
  EXPECT_DOUBLE_EQ(hi(0), 0.7);
  EXPECT_DOUBLE_EQ(hi(1), 0.7);
  const Vector lo = pi_map(s.data, 0.3, -inf, -inf);
  EXPECT_DOUBLE_EQ(lo(0), -0.3);
  EXPECT_DOUBLE_EQ(lo(1), -0.3);
}

TEST(PiMap, NearZeroAtTrueQuantiles)
{
  const SimSample s = sample('A', 20000, 2);
  const RowVector one = RowVector::Ones(1);
  for (double tau : { 0.25, 0.5, 0.75 }) {
    const double q0 = s.design.quantile(tau, 0.0, one);
    const double q1 = s.design.quantile(tau, 1.0, one);
    const Vector pi = pi_map(s.data, tau, q0, q1);
    EXPECT_LE(pi.cwiseAbs().maxCoeff(), 0.02) << "tau=" << tau;
  }
}

TEST(PiMap, EmptyArmIsDataError)
{
  const SimSample s = sample('A', 50, 3);
  EXPECT_THROW(pi_map(s.data.with_z(Matrix::Zero(50, 1)), 0.5, 0.0, 0.0), DataError);
  EXPECT_THROW(pi_map(s.data.with_z(Matrix::Constant(50, 1, 2.0)), 0.5, 0.0, 0.0), DataError);
}

TEST(PiMap, MonotoneInThePair)
{
  const SimSample s = sample('A', 3000, 4);
  Rng r(5);
  for (int t = 0; t < 100; ++t) {
    const double y0 = r.uniform(-2, 2), y1 = r.uniform(-1, 3);
    const double d0 = r.uniform(0, 1), d1 = r.uniform(0, 1);
    const Vector a = pi_map(s.data, 0.5, y0, y1);
    const Vector b = pi_map(s.data, 0.5, y0 - d0, y1 - d1);
    EXPECT_LE(b(0), a(0));
    EXPECT_LE(b(1), a(1));
  }
}

TEST(IdJacobian, OneSidedNoncompliance)
{
  const SimSample s = sample('B', 20000, 6);
  Index treated_in_control_arm = 0;
  for (Index i = 0; i < s.data.n(); ++i)
    treated_in_control_arm += s.data.z()(i, 0) == 0.0 && s.data.d()(i, 0) == 1.0;
  EXPECT_EQ(treated_in_control_arm, 0);

  const RowVector one = RowVector::Ones(1);
  const double q0 = s.design.quantile(0.5, 0.0, one);
  const double q1 = s.design.quantile(0.5, 1.0, one);
  const BinaryIdDiagnostic r = diagnose_binary(s.data, 0.5, q0, q1);
  EXPECT_EQ(r.jac(0, 1), 0.0);
  EXPECT_TRUE(r.empty_cell[1]);
  EXPECT_EQ(r.det, r.jac(0, 0) * r.jac(1, 1));
  EXPECT_NE(r.det, 0.0);
  EXPECT_EQ(r.mlr_right, 0.0);
  EXPECT_TRUE(r.mlr_satisfied);
  EXPECT_TRUE(r.full_rank);
}

TEST(IdJacobian, PlaceboRowsAlmostEqual)
{
  const SimSample s = sample('A', 20000, 7);
  const Dataset p = placebo(s.data, 8);
  const RowVector one = RowVector::Ones(1);
  const double q0 = s.design.quantile(0.5, 0.0, one);
  const double q1 = s.design.quantile(0.5, 1.0, one);
  const BinaryIdDiagnostic r = diagnose_binary(p, 0.5, q0, q1);
  EXPECT_LE(std::abs(r.det), 0.05 * r.jac.squaredNorm());

  // The strong design at the same points is clearly full rank, and its two
  // ratios are far further apart than the placebo's.
  const BinaryIdDiagnostic strong = diagnose_binary(s.data, 0.5, q0, q1);
  EXPECT_GT(std::abs(strong.det), 0.05 * strong.jac.squaredNorm());
  const auto rel_gap = [](const BinaryIdDiagnostic& d) {
    return std::abs(std::log(d.mlr_left / d.mlr_right));
  };
  EXPECT_LT(rel_gap(r), 0.25 * rel_gap(strong));
}

TEST(IdJacobian, DuplicatedArmsAreNotIdentified)
{
  // Both Z arms carry exactly the same (Y, D) sample.
  const SimSample s = sample('A', 2000, 9);
  const Index n = s.data.n();
  Vector y(2 * n);
  Matrix d(2 * n, 1), z(2 * n, 1);
  y << s.data.y(), s.data.y();
  d << s.data.d(), s.data.d();
  z << Matrix::Zero(n, 1), Matrix::Ones(n, 1);
  const Dataset ds(y, d, Matrix::Ones(2 * n, 1), z);
  const BinaryIdDiagnostic r = diagnose_binary(ds, 0.5, 0.0, 1.0);
  EXPECT_EQ(r.mlr_left, r.mlr_right);
  EXPECT_FALSE(r.mlr_satisfied);
  EXPECT_FALSE(r.full_rank);
  EXPECT_NEAR(r.det, 0.0, 1e-12 * r.jac.squaredNorm());
}

TEST(IdJacobian, EntriesNonnegative)
{
  Rng r(10);
  for (int t = 0; t < 20; ++t) {
    const SimSample s = sample('A', 300, 100 + t);
    const Matrix j = id_jacobian(s.data, r.uniform(-2, 2), r.uniform(-1, 3));
    EXPECT_GE(j.minCoeff(), 0.0);
  }
}

TEST(IdJacobian, CellDensityTimesArmShare)
{
  // Z=0 arm: three untreated rows at 0 and one treated row at 5, bandwidth 1.
  Vector y(6);
  Matrix d(6, 1), z(6, 1);
  y << 0, 0, 0, 5, 1, 1;
  d << 0, 0, 0, 1, 0, 1;
  z << 0, 0, 0, 0, 1, 1;
  const Dataset ds(y, d, Matrix::Ones(6, 1), z);
  const Matrix j = id_jacobian(ds, 0.0, 5.0, 1.0);
  // f(0 | D=0, Z=0) = phi(0) and P[D=0 | Z=0] = 3/4
  EXPECT_NEAR(j(0, 0), kernel::gaussian(0.0) * 0.75, 1e-15);
  EXPECT_NEAR(j(0, 1), kernel::gaussian(0.0) * 0.25, 1e-15);
  EXPECT_NEAR(j(1, 0), kernel::gaussian(1.0) * 0.5, 1e-15);
  EXPECT_NEAR(j(1, 1), kernel::gaussian(4.0) * 0.5, 1e-15);
}

TEST(MlrCheck, EqualityCaseNotSatisfied)
{
  EXPECT_FALSE(mlr_holds(2.0, 2.0));
  EXPECT_FALSE(mlr_holds(2.0, 2.0 * (1 + 5e-4)));
  EXPECT_TRUE(mlr_holds(2.0, 2.01));
  EXPECT_TRUE(mlr_holds(inf, 3.0));
  EXPECT_FALSE(mlr_holds(inf, inf));
  EXPECT_FALSE(mlr_holds(std::nan(""), 1.0));
  EXPECT_TRUE(std::isinf(lr_ratio(1.0, 0.0)));
  EXPECT_TRUE(std::isnan(lr_ratio(0.0, 0.0)));
}

TEST(MlrCheck, EquivalentToFullRankOnRandomCells)
{
  Rng r(11);
  int agree = 0;
  for (int t = 0; t < 50; ++t) {
    const Index n = 200 + Index(r.uniform() * 400);
    // random cell probabilities, sometimes with an empty cell
    const double p10 = t % 7 == 0 ? 0.0 : r.uniform(0.05, 0.95); // P[D=1 | Z=0]
    const double p11 = r.uniform(0.05, 0.95);
    const double shift = t % 5 == 0 ? 0.0 : r.uniform(-1, 1);
    Vector y(n);
    Matrix d(n, 1), z(n, 1);
    for (Index i = 0; i < n; ++i) {
      z(i, 0) = i % 2;
      d(i, 0) = r.bernoulli(z(i, 0) ? p11 : p10);
      y(i) = r.normal() + d(i, 0) * (1.0 + shift * z(i, 0));
    }
    const Dataset ds(y, d, Matrix::Ones(n, 1), z);
    const BinaryIdDiagnostic rep = diagnose_binary(ds, 0.5, r.uniform(-1, 1), r.uniform(0, 2));
    agree += rep.full_rank == rep.mlr_satisfied;
    EXPECT_EQ(rep.full_rank, rep.mlr_satisfied) << "instance " << t;
  }
  EXPECT_EQ(agree, 50);
}

TEST(Diagnostic, Reports)
{
  const SimSample s = sample('B', 1000, 12);
  const BinaryIdDiagnostic r = diagnose_binary(s.data, 0.5, 0.0, 1.0);
  std::ostringstream kv;
  write_diagnostic_kv(kv, r);
  EXPECT_NE(kv.str().find("mlr_right=0\n"), std::string::npos);
  EXPECT_NE(kv.str().find("empty_cells=z0d1"), std::string::npos);
  std::ostringstream csv;
  write_diagnostic_csv(csv, { r });
  EXPECT_EQ(csv.str().substr(0, 8), "tau,y0,y");

  const Index n = 10;
  const Dataset multi(Vector::Zero(n), Matrix::Constant(n, 1, 2.0), Matrix::Ones(n, 1),
                      Matrix::Zero(n, 1));
  EXPECT_THROW(diagnose_binary(multi, 0.5, 0.0, 0.0), DataError);
}
