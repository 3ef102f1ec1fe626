#pragma once

// Point-identification diagnostics for one binary treatment and one binary
// instrument: the moment map Pi(y0, y1), its Jacobian made of the joint
// densities f_{Y,D}(y_d, d | Z=z), and the likelihood-ratio condition that is
// equivalent to the Jacobian having full rank.

#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "kernel.hpp"
#include "linalg.hpp"

namespace ivqr {

struct BinaryIdDiagnostic
{
  double y0 = 0.0;
  double y1 = 0.0;
  double tau = 0.5;
  Vector pi;            ///< (P[Y <= y_D | Z=0] - tau, P[Y <= y_D | Z=1] - tau)
  Matrix jac;           ///< rows z = 0, 1; columns d = 0, 1
  double det = 0.0;
  double mlr_left = 0.0;  ///< f(y1,1|Z=1) / f(y0,0|Z=1)
  double mlr_right = 0.0; ///< f(y1,1|Z=0) / f(y0,0|Z=0)
  bool mlr_satisfied = false;
  bool full_rank = false;
  double condition_number = std::numeric_limits<double>::infinity();
  std::array<bool, 4> empty_cell{}; ///< index 2*z + d
};

namespace detail {

inline void require_binary(const Dataset& ds)
{
  if (ds.s() != 1 || ds.m() != 1)
    throw DomainError("identification diagnostics need exactly one endogenous regressor and one "
                      "instrument");
  for (Index i = 0; i < ds.n(); ++i) {
    const double d = ds.d()(i, 0);
    const double z = ds.z()(i, 0);
    if ((d != 0.0 && d != 1.0) || (z != 0.0 && z != 1.0))
      throw DataError("identification diagnostics need binary D and Z (row " + std::to_string(i) +
                      ")");
  }
}

} // namespace detail

inline Vector pi_map(const Dataset& ds, double tau, double y0, double y1)
{
  check_tau(tau);
  detail::require_binary(ds);
  std::array<double, 2> hits{ 0.0, 0.0 };
  std::array<double, 2> counts{ 0.0, 0.0 };
  for (Index i = 0; i < ds.n(); ++i) {
    const int z = ds.z()(i, 0) == 1.0 ? 1 : 0;
    const double yd = ds.d()(i, 0) == 1.0 ? y1 : y0;
    counts[z] += 1.0;
    if (ds.y()(i) <= yd)
      hits[z] += 1.0;
  }
  if (counts[0] == 0.0 || counts[1] == 0.0)
    throw DataError("pi_map: the Z=" + std::string(counts[0] == 0.0 ? "0" : "1") + " arm is empty");
  Vector pi(2);
  pi << hits[0] / counts[0] - tau, hits[1] / counts[1] - tau;
  return pi;
}

/// Entry (z, d) = kernel density of Y at y_d within cell (D=d, Z=z) times
/// P[D=d | Z=z]. With h <= 0 each cell uses 1.06 sd n_cell^(-1/5).
inline Matrix id_jacobian(const Dataset& ds, double y0, double y1, double h = 0.0,
                          std::array<bool, 4>* empty = nullptr)
{
  detail::require_binary(ds);
  Matrix jac = Matrix::Zero(2, 2);
  std::array<std::vector<double>, 4> cells;
  std::array<double, 2> arm{ 0.0, 0.0 };
  for (Index i = 0; i < ds.n(); ++i) {
    const int z = ds.z()(i, 0) == 1.0 ? 1 : 0;
    const int d = ds.d()(i, 0) == 1.0 ? 1 : 0;
    cells[2 * z + d].push_back(ds.y()(i));
    arm[z] += 1.0;
  }
  if (arm[0] == 0.0 || arm[1] == 0.0)
    throw DataError("id_jacobian: a Z arm is empty");
  const double ysd = linalg::sample_sd(ds.y());
  for (int z = 0; z < 2; ++z) {
    for (int d = 0; d < 2; ++d) {
      const auto& c = cells[2 * z + d];
      if (empty)
        (*empty)[2 * z + d] = c.empty();
      if (c.empty())
        continue;
      double bw = h;
      if (!(bw > 0.0)) {
        const Vector v = Eigen::Map<const Vector>(c.data(), static_cast<Index>(c.size()));
        double sd = c.size() > 1 ? linalg::sample_sd(v) : 0.0;
        if (!(sd > 0.0))
          sd = ysd > 0.0 ? ysd : 1.0;
        bw = 1.06 * sd * std::pow(static_cast<double>(c.size()), -0.2);
      }
      const double at = d == 1 ? y1 : y0;
      double s = 0.0;
      for (double v : c)
        s += kernel::gaussian((at - v) / bw);
      // cell density (s / (n_cell bw)) times n_cell / n_arm
      jac(z, d) = s / (arm[z] * bw);
    }
  }
  return jac;
}

/// Ratio that reports a zero denominator as +infinity (0/0 is NaN).
inline double lr_ratio(double num, double den)
{
  if (den == 0.0)
    return num == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                      : std::numeric_limits<double>::infinity();
  return num / den;
}

/// Strict inequality beyond 1e-3 max(left, right); NaN or two infinite
/// ratios do not qualify.
inline bool mlr_holds(double left, double right)
{
  if (std::isnan(left) || std::isnan(right))
    return false;
  if (std::isinf(left) || std::isinf(right))
    return std::isinf(left) != std::isinf(right);
  return std::abs(left - right) > 1e-3 * std::max(left, right);
}

/// The same comparison written on the determinant: cross-multiplying the
/// two ratios by the positive denominators gives |det| against
/// 1e-3 max(J00 J11, J01 J10).
inline bool jacobian_full_rank(const Matrix& jac)
{
  const double a = jac(0, 0) * jac(1, 1);
  const double b = jac(0, 1) * jac(1, 0);
  const double det = a - b;
  return std::abs(det) > 1e-3 * std::max(a, b);
}

inline BinaryIdDiagnostic diagnose_binary(const Dataset& ds, double tau, double y0, double y1,
                                          double h = 0.0)
{
  BinaryIdDiagnostic r;
  r.y0 = y0;
  r.y1 = y1;
  r.tau = tau;
  r.pi = pi_map(ds, tau, y0, y1);
  r.jac = id_jacobian(ds, y0, y1, h, &r.empty_cell);
  r.det = r.jac.determinant();
  r.mlr_left = lr_ratio(r.jac(1, 1), r.jac(1, 0));
  r.mlr_right = lr_ratio(r.jac(0, 1), r.jac(0, 0));
  r.mlr_satisfied = mlr_holds(r.mlr_left, r.mlr_right);
  r.full_rank = jacobian_full_rank(r.jac);
  const Eigen::JacobiSVD<Matrix> svd(r.jac);
  const Vector sv = svd.singularValues();
  r.condition_number = sv(1) > 0.0 ? sv(0) / sv(1) : std::numeric_limits<double>::infinity();
  return r;
}

inline void write_diagnostic_kv(std::ostream& out, const BinaryIdDiagnostic& r)
{
  const auto f = [](double v) { return csv::format_number(v); };
  out << "tau=" << f(r.tau) << "\n"
      << "y0=" << f(r.y0) << "\n"
      << "y1=" << f(r.y1) << "\n"
      << "pi_z0=" << f(r.pi(0)) << "\n"
      << "pi_z1=" << f(r.pi(1)) << "\n"
      << "jac_z0_d0=" << f(r.jac(0, 0)) << "\n"
      << "jac_z0_d1=" << f(r.jac(0, 1)) << "\n"
      << "jac_z1_d0=" << f(r.jac(1, 0)) << "\n"
      << "jac_z1_d1=" << f(r.jac(1, 1)) << "\n"
      << "det=" << f(r.det) << "\n"
      << "condition_number=" << f(r.condition_number) << "\n"
      << "mlr_left=" << f(r.mlr_left) << "\n"
      << "mlr_right=" << f(r.mlr_right) << "\n"
      << "mlr_satisfied=" << (r.mlr_satisfied ? "true" : "false") << "\n"
      << "full_rank=" << (r.full_rank ? "true" : "false") << "\n";
  std::string empty;
  for (int c = 0; c < 4; ++c)
    if (r.empty_cell[static_cast<std::size_t>(c)])
      empty += std::string(empty.empty() ? "" : ",") + "z" + std::to_string(c / 2) + "d" +
               std::to_string(c % 2);
  out << "empty_cells=" << (empty.empty() ? "none" : empty) << "\n";
}

inline void write_diagnostic_csv(std::ostream& out, const std::vector<BinaryIdDiagnostic>& rows,
                                 const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  w.row({ "tau", "y0", "y1", "pi_z0", "pi_z1", "jac_z0_d0", "jac_z0_d1", "jac_z1_d0",
          "jac_z1_d1", "det", "condition_number", "mlr_left", "mlr_right", "mlr_satisfied",
          "full_rank" });
  const auto f = [](double v) { return csv::format_number(v); };
  for (const auto& r : rows)
    w.row({ f(r.tau), f(r.y0), f(r.y1), f(r.pi(0)), f(r.pi(1)), f(r.jac(0, 0)), f(r.jac(0, 1)),
            f(r.jac(1, 0)), f(r.jac(1, 1)), f(r.det), f(r.condition_number), f(r.mlr_left),
            f(r.mlr_right), r.mlr_satisfied ? "1" : "0", r.full_rank ? "1" : "0" });
}

} // namespace ivqr
