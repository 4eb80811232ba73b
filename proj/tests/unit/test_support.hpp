#pragma once

#include <cmath>
#include <random>

#include "dmac/autodiff/tensor.hpp"

namespace dmac::testing {

template <typename S, typename Rng>
ad::Tensor<S> random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  ad::Tensor<S> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(u(rng));
  return t;
}

// Plain nested-loop convolution, accumulated tap by tap in (c, ky, kx) order.
inline ad::Tensor<double> direct_conv(const ad::Tensor<double>& x, const ad::Tensor<double>& w,
                                      const ad::Tensor<double>& b, std::size_t stride, std::size_t pad,
                                      std::size_t rate) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t span = K + (K - 1) * (rate - 1);
  const std::size_t Ho = (H + 2 * pad - span) / stride + 1, Wo = (W + 2 * pad - span) / stride + 1;
  ad::Tensor<double> y({N, O, Ho, Wo});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long iy = long(oy * stride + ky * rate) - long(pad);
                const long ix = long(ox * stride + kx * rate) - long(pad);
                const double v = (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W))
                                     ? 0.0
                                     : x[((n * C + c) * H + iy) * W + ix];
                acc = std::fma(w[((o * C + c) * K + ky) * K + kx], v, acc);
              }
          y[((n * O + o) * Ho + oy) * Wo + ox] = acc + b[o];
        }
  return y;
}

}  // namespace dmac::testing
