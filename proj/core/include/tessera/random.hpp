#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace tessera {

/// Seeded generator with platform-independent float mappings (the standard
/// distributions are implementation-defined, so they are not used).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Normal with standard deviation `stddev`, redrawn outside +-2 stddev.
  double trunc_normal(double stddev);

  /// Stable sub-seed for a (seed, keys...) tuple.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> keys);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tessera
