#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace abp {

/// Named streams; distinct streams seeded from the same master seed
/// never interleave.
enum class Stream : std::uint64_t {
  Init = 0x496e6974,          // params + latent bank initialization
  LangevinNoise = 0x4c616e67, // U_tau draws (further split per example)
  Synthesis = 0x53796e74,     // Z and epsilon draws during feature synthesis
  Shuffle = 0x53687566,       // per-epoch index permutation
};

namespace detail {
// SplitMix64 finalizer (Steele, Lea, Flood 2014).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// SplitMix64 stream. State is a single u64, so streams serialize and
/// split trivially. A normal draw consumes exactly two uniforms
/// (Box-Muller, sine branch discarded) so the mapping from the uniform
/// stream is fixed.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, Stream stream, std::uint64_t substream = 0)
      : state_(detail::mix64(detail::mix64(seed) ^
                             detail::mix64(static_cast<std::uint64_t>(stream) + 0x9e3779b97f4a7c15ULL) ^
                             detail::mix64(substream ^ 0xd1b54a32d192ed03ULL))) {}

  static RngStream from_state(std::uint64_t s) {
    RngStream r;
    r.state_ = s;
    return r;
  }
  std::uint64_t state() const { return state_; }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  /// Uniform in (0, 1].
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Uniform integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  double normal(double mean = 0.0, double std = 1.0) {
    const double u1 = next_unit();
    const double u2 = next_unit();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + std * r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::vector<double> gaussian(std::size_t n, double mean = 0.0, double std = 1.0) {
    if (n < 1) throw std::invalid_argument("gaussian: n must be >= 1");
    if (std < 0.0) throw std::invalid_argument("gaussian: std must be >= 0");
    std::vector<double> out(n);
    for (std::size_t i = 0; i + 1 < n; i += 2) {
      const double u1 = next_unit();
      const double u2 = next_unit();
      const double r = std::sqrt(-2.0 * std::log(u1));
      out[i] = mean + std * r * std::cos(2.0 * std::numbers::pi * u2);
      out[i + 1] = mean + std * r * std::sin(2.0 * std::numbers::pi * u2);
    }
    if (n % 2 == 1) out[n - 1] = normal(mean, std);
    return out;
  }

  /// Fisher-Yates over indices [0, n).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::swap(idx[i - 1], idx[next_below(i)]);
    }
    return idx;
  }

 private:
  std::uint64_t state_ = 0;
};

}  // namespace abp
