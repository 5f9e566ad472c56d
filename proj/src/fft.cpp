#include "mfco/fft.hpp"

#include <cassert>
#include <cmath>

#include "mfco/errors.hpp"

namespace mfco::fft {

Plan::Plan(std::size_t n) : n_(n) {
  if (!is_pow2(n)) throw ValueError("fft length must be a power of two, got " + std::to_string(n));
  tw_re_.resize(n / 2);
  tw_im_.resize(n / 2);
  const double step = -6.283185307179586476925286766559 / static_cast<double>(n);
  for (std::size_t j = 0; j < n / 2; ++j) {
    tw_re_[j] = std::cos(step * static_cast<double>(j));
    tw_im_[j] = std::sin(step * static_cast<double>(j));
  }
}

void Plan::transform(std::span<double> re, std::span<double> im, bool inverse) const {
  assert(re.size() == n_ && im.size() == n_);
  const std::size_t n = n_;
  if (n == 1) return;

  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }

  const double conj = inverse ? -1.0 : 1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len >> 1;
    const std::size_t stride = n / len;
    for (std::size_t blk = 0; blk < n; blk += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const double wr = tw_re_[j * stride];
        const double wi = conj * tw_im_[j * stride];
        const std::size_t a = blk + j;
        const std::size_t b = a + half;
        const double tr = re[b] * wr - im[b] * wi;
        const double ti = re[b] * wi + im[b] * wr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
      }
    }
  }
}

PlanPtr plan_for(std::size_t n) { return std::make_shared<Plan>(n); }

}  // namespace mfco::fft
