#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace regalign {

/// Named random stream: a Mersenne Twister keyed by (seed, stream, index).
/// Conversions to reals are done here rather than through the standard
/// distributions so sequences are identical across standard libraries.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(stream),
                      std::uint32_t(stream >> 32), std::uint32_t(index), std::uint32_t(index >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

 private:
  std::mt19937_64 engine_;
};

// Stream identifiers.
inline constexpr std::uint64_t kStreamScene = 1;
inline constexpr std::uint64_t kStreamPose = 2;
inline constexpr std::uint64_t kStreamPerturb = 3;
inline constexpr std::uint64_t kStreamInit = 4;
inline constexpr std::uint64_t kStreamShuffle = 5;
inline constexpr std::uint64_t kStreamTrainPerturb = 6;

}  // namespace regalign
