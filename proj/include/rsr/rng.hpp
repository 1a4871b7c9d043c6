#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace rsr {

/// Philox4x32-10 counter-based generator: a pure function of (counter, key).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Standard normal draw addressed by (seed, stream, draw, element). Equal
/// addresses give equal values on every call and every thread.
double counter_normal(std::uint64_t seed, std::uint32_t stream, std::uint64_t draw,
                      std::uint32_t element);

/// Uniform in [0, 1) from 53 random bits.
inline double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Sequential generator for data synthesis, shuffling and attack starts.
/// Built on std::mt19937_64 (fully specified by the standard) with explicit
/// conversions so results do not depend on the library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return to_unit(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::span<T> v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes several integers into one seed.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0);

}  // namespace rsr
