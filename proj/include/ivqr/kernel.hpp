#pragma once

#include <cmath>

#include "errors.hpp"
#include "linalg.hpp"

namespace ivqr::kernel {

inline constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;

/// Standard Gaussian density.
inline double gaussian(double u)
{
  return inv_sqrt_2pi * std::exp(-0.5 * u * u);
}

/// Survival function of the scaled Gaussian kernel:
/// G_h(u) = integral_u^inf K(v/h)/h dv = 1 - Phi(u/h).
inline double survival(double u, double h)
{
  if (!(h > 0.0))
    throw DomainError("smoothing bandwidth must be positive");
  return 0.5 * std::erfc(u / (h * M_SQRT2));
}

/// Rule-of-thumb bandwidth 1.06 * sd * n^(-rate). Falls back to the
/// interquartile-free sd; returns a tiny positive value for degenerate input.
inline double rule_of_thumb(const Vector& values, double rate)
{
  const double sd = linalg::sample_sd(values);
  const double n = static_cast<double>(std::max<Index>(values.size(), 1));
  const double h = 1.06 * sd * std::pow(n, -rate);
  return h > 0.0 ? h : 1e-8;
}

/// Default bandwidth for density-at-zero of residuals: rate N^(-1/3).
inline double residual_bandwidth(const Vector& residuals)
{
  return rule_of_thumb(residuals, 1.0 / 3.0);
}

/// Kernel weights K(r_i / h) for a residual vector.
inline Vector weights(const Vector& residuals, double h)
{
  if (!(h > 0.0))
    throw DomainError("kernel bandwidth must be positive");
  return residuals.unaryExpr([h](double r) { return gaussian(r / h); });
}

} // namespace ivqr::kernel
