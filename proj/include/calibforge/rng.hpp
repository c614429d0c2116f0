#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace calibforge {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Counter-based random stream. Identical (seed, stream) pairs produce
/// identical draw sequences on every platform; streams derived from the
/// same seed with distinct labels are statistically independent.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : key_(detail::splitmix64(seed ^ detail::splitmix64(stream))) {}

  /// Child stream addressed by a chain of integer labels,
  /// e.g. derive(seed, {kMaskLabel, epoch, batch, example, sample}).
  static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) {
    std::uint64_t s = 0;
    for (std::uint64_t l : labels) s = detail::splitmix64(s ^ detail::splitmix64(l + 0x632be59bd9b4e019ull));
    return RngStream(seed, s);
  }

  std::uint64_t next_u64() { return detail::splitmix64(key_ + counter_++ * 0x9e3779b97f4a7c15ull); }

  /// Uniform in [0,1).
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0,1]; never zero, safe under log.
  double next_uniform_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double next_normal() {
    const double u1 = next_uniform_open();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool next_bernoulli(double p) { return next_uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Fixed top-level stream labels; all randomness in the artifact funnels
// through one seed and these labels.
namespace stream_label {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kMask = 2;
inline constexpr std::uint64_t kData = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kBatch = 5;
inline constexpr std::uint64_t kMc = 6;
inline constexpr std::uint64_t kNoise = 7;
}  // namespace stream_label

}  // namespace calibforge
