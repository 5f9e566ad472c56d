#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace mfco::fft {

inline bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline std::size_t log2_of(std::size_t n) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n) ++k;
  return k;
}

/* Precomputed twiddle factors for a fixed power-of-two length.
 * Immutable after construction; safe to share across threads. */
class Plan {
public:
  explicit Plan(std::size_t n);
  std::size_t size() const { return n_; }

  /* Iterative radix-2 transform, in place on split real/imaginary
   * arrays. No output scaling in either direction: a forward pass
   * followed by an inverse pass multiplies the input by n. */
  void transform(std::span<double> re, std::span<double> im, bool inverse) const;

private:
  std::size_t n_;
  std::vector<double> tw_re_, tw_im_;  // e^{-2 pi i j / n}, j < n/2
};

using PlanPtr = std::shared_ptr<const Plan>;

PlanPtr plan_for(std::size_t n);

}  // namespace mfco::fft
