#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>

namespace zigma::diffkit::detail {

inline constexpr std::size_t kExpChunk = 64;

// v[i] = exp(v[i]) with Eigen's packet exp. Every element goes through a
// fixed-size aligned chunk (the last one zero-padded), so the result for an
// element never depends on its address or on where it sits in the array. An
// unaligned map would peel a scalar head and the scalar exp differs in the last bit.
inline void exp_inplace(double* v, std::size_t n) {
  Eigen::Array<double, kExpChunk, 1> buf;
  for (std::size_t i0 = 0; i0 < n; i0 += kExpChunk) {
    const std::size_t m = std::min(kExpChunk, n - i0);
    std::copy(v + i0, v + i0 + m, buf.data());
    std::fill(buf.data() + m, buf.data() + kExpChunk, 0.0);
    buf = buf.exp();
    std::copy(buf.data(), buf.data() + m, v + i0);
  }
}

}  // namespace zigma::diffkit::detail
