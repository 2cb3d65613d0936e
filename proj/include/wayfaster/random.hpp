#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace wayfaster {

/// Seeded random stream with platform-independent uniform/normal draws
/// (the std distributions are implementation-defined).
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one draw per call, no cached pair).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  double normal(double sigma) { return sigma == 0.0 ? 0.0 : sigma * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Independent stream keyed by `index`, derived without advancing this one.
  RandomStream substream(std::uint64_t index) const {
    std::uint64_t z = seed_hash_ + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return RandomStream(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_hash_ = engine_();
};

}  // namespace wayfaster
