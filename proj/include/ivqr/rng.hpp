#pragma once

// Counter-based random numbers (Philox4x32-10, Salmon et al. 2011) with
// deterministic stream splitting. Every value depends only on
// (key, stream, counter), so Monte Carlo replications and grid nodes can draw
// from independent, reproducible streams regardless of evaluation order or
// thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace ivqr {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

} // namespace detail

/// Philox4x32 with 10 rounds. Pure function of counter and key.
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key)
{
  constexpr std::uint32_t M0 = 0xD2511F53u;
  constexpr std::uint32_t M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u;
  constexpr std::uint32_t W1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += W0;
      key[1] += W1;
    }
    const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = { hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0 };
  }
  return ctr;
}

/// A reproducible random stream: the Philox key is the root seed, the upper
/// half of the counter identifies the stream and the lower half counts blocks.
///
/// `split(id)` derives a child stream whose identity is a hash of the parent
/// stream id and `id`; children of the same parent with distinct ids never
/// share counters. Satisfies UniformRandomBitGenerator.
class Rng
{
public:
  using result_type = std::uint32_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
    : seed_(seed)
    , stream_(stream)
  {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  Rng split(std::uint64_t id) const
  {
    return Rng(seed_, detail::splitmix64(stream_ ^ detail::splitmix64(id + 0x632BE59BD9B4E019ULL)));
  }

  result_type operator()()
  {
    if (pos_ == 4) {
      refill();
    }
    return buffer_[pos_++];
  }

  std::uint64_t next_u64()
  {
    const std::uint64_t hi = (*this)();
    const std::uint64_t lo = (*this)();
    return (hi << 32) | lo;
  }

  /// Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform()
  {
    const std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal by the Box-Muller transform (both variates used).
  double normal()
  {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  bool bernoulli(double p) { return uniform() < p; }

private:
  void refill()
  {
    const std::array<std::uint32_t, 4> ctr = { static_cast<std::uint32_t>(block_),
                                               static_cast<std::uint32_t>(block_ >> 32),
                                               static_cast<std::uint32_t>(stream_),
                                               static_cast<std::uint32_t>(stream_ >> 32) };
    const std::array<std::uint32_t, 2> key = { static_cast<std::uint32_t>(seed_),
                                               static_cast<std::uint32_t>(seed_ >> 32) };
    buffer_ = philox4x32_10(ctr, key);
    ++block_;
    pos_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

} // namespace ivqr
