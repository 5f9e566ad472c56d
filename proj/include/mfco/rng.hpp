#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>

namespace mfco {

/* SplitMix64 finalizer. Used both as a sequential generator and as a
 * counter-based hash so that streamed operators can address any entry
 * of their implicit matrix without storing it. */
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/* Entry k of the stream identified by `seed`, uniform on [0, 1). */
inline double stream_uniform01(std::uint64_t seed, std::uint64_t k) {
  return static_cast<double>(mix64(seed + k * 0x9e3779b97f4a7c15ULL) >> 11) *
         0x1.0p-53;
}

/* Entry k of the stream identified by `seed`, uniform on (-1, 1). */
inline double stream_uniform_sym(std::uint64_t seed, std::uint64_t k) {
  return 2.0 * stream_uniform01(seed, k) - 1.0;
}

/* Small deterministic sequential generator for problem/data synthesis.
 * Identical output for identical seeds on every platform that rounds
 * libm the same way. */
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /* Box-Muller; one trig pair per two samples. */
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace mfco
