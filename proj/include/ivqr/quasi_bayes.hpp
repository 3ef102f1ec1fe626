#pragma once

// Quasi-Bayesian estimation: random-walk Metropolis on the quasi-posterior
// exp(-m_N(theta)/2) under a uniform prior on a box.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "csv.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "gmm.hpp"
#include "linalg.hpp"
#include "rng.hpp"

namespace ivqr {

inline double quasi_log_likelihood(const GmmObjective& obj, const Vector& theta)
{
  return -0.5 * obj(theta);
}

struct Chain
{
  Matrix draws;          ///< T x dim, including the burn-in rows
  Index burn_in = 0;
  double acceptance = 0.0; ///< post-burn-in acceptance rate of coordinate proposals
  Vector scale;          ///< frozen proposal standard deviations
  std::uint64_t seed = 0;

  Matrix kept() const { return draws.bottomRows(draws.rows() - burn_in); }
};

struct SamplerOptions
{
  double target_acceptance = 0.23;
  /// Proposal sd is capped at this fraction of the box width per coordinate.
  double max_scale_fraction = 0.1;
  std::optional<Vector> start; ///< default: best node of a coarse grid
  int start_grid_points = 21;  ///< per coordinate
};

/// Random-walk Metropolis within Gibbs: every iteration proposes a Gaussian
/// move for each coordinate in turn. Proposal scales adapt toward the target
/// acceptance rate during burn-in (Robbins-Monro on the log scale) and are
/// frozen afterwards. Proposals leaving the box are rejected.
template <class LogDensity>
Chain sample_log_density(LogDensity&& logd, const Box& box, Index iterations, Index burn_in,
                         std::uint64_t seed, const SamplerOptions& opt = {})
{
  box.validate();
  if (!(iterations > burn_in) || burn_in < 0)
    throw DomainError("sample: need iterations > burn_in >= 0");
  const Index d = box.dim();
  const Vector width = box.upper - box.lower;
  Vector cap = opt.max_scale_fraction * width;
  for (Index j = 0; j < d; ++j)
    if (!(cap(j) > 0.0))
      cap(j) = 1e-12;

  Vector x(d);
  if (opt.start) {
    x = *opt.start;
    if (!box.contains(x))
      throw DomainError("sample: start point lies outside the box");
  } else {
    std::vector<double> steps;
    for (Index j = 0; j < d; ++j)
      steps.push_back(width(j) / std::max(1, opt.start_grid_points - 1));
    const Grid g = box.grid(steps);
    x = grid_search(g, [&](const Vector& t) { return -logd(t); }).best;
  }
  double lx = logd(x);

  Chain ch;
  ch.seed = seed;
  ch.burn_in = burn_in;
  ch.draws.resize(iterations, d);
  Vector log_scale = (0.25 * cap).array().log().matrix();
  Rng rng(seed);
  Index accepted = 0;
  Index proposed = 0;
  for (Index t = 0; t < iterations; ++t) {
    const bool adapting = t < burn_in;
    const double gain = 1.0 / std::sqrt(static_cast<double>(t) + 1.0);
    for (Index j = 0; j < d; ++j) {
      const double sd = std::exp(log_scale(j));
      Vector y = x;
      y(j) += sd * rng.normal();
      const double u = rng.uniform();
      bool acc = false;
      if (y(j) >= box.lower(j) && y(j) <= box.upper(j)) {
        const double ly = logd(y);
        if (std::log(u) < ly - lx) {
          x = y;
          lx = ly;
          acc = true;
        }
      }
      if (adapting) {
        log_scale(j) += gain * ((acc ? 1.0 : 0.0) - opt.target_acceptance);
        log_scale(j) = std::min(log_scale(j), std::log(cap(j)));
      } else {
        ++proposed;
        accepted += acc;
      }
    }
    ch.draws.row(t) = x.transpose();
  }
  ch.scale = log_scale.array().exp().matrix();
  ch.acceptance = proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  if (accepted == 0)
    throw SolverError("sample: no proposal was accepted after adaptation; widen the prior box or "
                      "sample the smoothed objective",
                      x);
  return ch;
}

/// Samples the quasi-posterior of a GMM objective (smoothed when the
/// objective carries a bandwidth) under the uniform prior on `box`.
inline Chain sample(const GmmObjective& obj, const Box& box, Index iterations, Index burn_in,
                    std::uint64_t seed, const SamplerOptions& opt = {})
{
  if (box.dim() != obj.dim())
    throw DomainError("sample: box dimension does not match theta");
  return sample_log_density([&](const Vector& t) { return quasi_log_likelihood(obj, t); }, box,
                            iterations, burn_in, seed, opt);
}

struct ChainSummary
{
  Vector mean;
  Vector median;
  Vector lower; ///< p/2 quantile
  Vector upper; ///< 1 - p/2 quantile
  Vector sd;
  Vector mc_se; ///< batch-means Monte Carlo standard error of the mean
};

/// Linear-interpolation sample quantile of sorted values.
inline double sorted_quantile(const std::vector<double>& v, double q)
{
  if (v.empty())
    throw DomainError("quantile of an empty sample");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return v[lo] + w * (v[hi] - v[lo]);
}

inline ChainSummary summaries(const Chain& chain, double p = 0.05)
{
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("summaries: p must lie in (0,1)");
  const Matrix kept = chain.kept();
  const Index t = kept.rows();
  const Index d = kept.cols();
  if (t == 0)
    throw DomainError("summaries: chain has no post-burn-in draws");
  ChainSummary s;
  s.mean.resize(d);
  s.median.resize(d);
  s.lower.resize(d);
  s.upper.resize(d);
  s.sd.resize(d);
  s.mc_se.resize(d);
  const auto batch = std::max<Index>(1, static_cast<Index>(std::sqrt(static_cast<double>(t))));
  const Index nb = t / batch;
  for (Index j = 0; j < d; ++j) {
    std::vector<double> v(kept.col(j).data(), kept.col(j).data() + t);
    const double mean = kept.col(j).mean();
    std::sort(v.begin(), v.end());
    s.mean(j) = std::clamp(mean, v.front(), v.back());
    s.median(j) = sorted_quantile(v, 0.5);
    s.lower(j) = sorted_quantile(v, p / 2.0);
    s.upper(j) = sorted_quantile(v, 1.0 - p / 2.0);
    s.sd(j) = t > 1 ? std::sqrt((kept.col(j).array() - mean).square().sum() / static_cast<double>(t - 1))
                    : 0.0;
    if (nb > 1) {
      double ss = 0.0;
      for (Index b = 0; b < nb; ++b) {
        const double bm = kept.col(j).segment(b * batch, batch).mean();
        ss += (bm - mean) * (bm - mean);
      }
      s.mc_se(j) = std::sqrt(ss / static_cast<double>(nb - 1)) / std::sqrt(static_cast<double>(nb));
    } else {
      s.mc_se(j) = 0.0;
    }
  }
  return s;
}

inline void write_chain_csv(std::ostream& out, const Chain& chain,
                            const std::vector<std::string>& names,
                            const std::vector<std::string>& comments = {})
{
  csv::Writer w(out);
  for (const auto& c : comments)
    w.comment(c);
  w.comment("burn_in=" + std::to_string(chain.burn_in) +
            " acceptance=" + csv::format_number(chain.acceptance));
  std::vector<std::string> header{ "iteration" };
  header.insert(header.end(), names.begin(), names.end());
  w.row(header);
  for (Index t = 0; t < chain.draws.rows(); ++t) {
    std::vector<std::string> row{ std::to_string(t) };
    for (Index j = 0; j < chain.draws.cols(); ++j)
      row.push_back(csv::format_number(chain.draws(t, j)));
    w.row(row);
  }
}

} // namespace ivqr
