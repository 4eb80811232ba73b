#pragma once

// Differentiable operations over NCHW tensors.
//
// Each op computes its output eagerly and, when a tape is active and an input
// requires a gradient, records an adjoint that accumulates into input grads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "dmac/autodiff/gemm.hpp"
#include "dmac/autodiff/tensor.hpp"

namespace dmac::ad {

namespace detail {

template <typename S>
void require_rank(const Tensor<S>& t, std::size_t rank, const char* op) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + (t.defined() ? to_string(t.shape()) : "undefined"));
  }
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

template <typename S>
Tensor<S> finish(Tensor<S> out, const char* op) {
  require_finite(out, op);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t rate = 1;  // spacing between kernel taps; 1 is a standard convolution
};

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w;
  std::size_t out_h, out_w;
  Conv2dOptions opt;

  std::size_t taps() const { return channels * kernel_h * kernel_w; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel,
                                      const Conv2dOptions& opt) {
  const std::size_t extent = kernel + (kernel - 1) * (opt.rate - 1);
  if (in + 2 * opt.padding < extent) {
    throw DimensionError("conv2d: effective kernel extent " + std::to_string(extent) +
                         " exceeds padded input " + std::to_string(in + 2 * opt.padding));
  }
  return (in + 2 * opt.padding - extent) / opt.stride + 1;
}

namespace detail {

// Column matrix (taps x out_pixels) for one image; zero outside the input.
template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* col) {
  const auto& o = g.opt;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        S* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * o.stride + ky * o.rate) -
                          static_cast<long>(o.padding);
          S* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, S(0));
            continue;
          }
          const S* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * o.stride + kx * o.rate) -
                            static_cast<long>(o.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width))
                          ? S(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* col, const ConvGeometry& g, S* dx) {
  const auto& o = g.opt;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const S* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.out_pixels();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * o.stride + ky * o.rate) -
                          static_cast<long>(o.padding);
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          S* dst = dx + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const S* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * o.stride + kx * o.rate) -
                            static_cast<long>(o.padding);
            if (ix >= 0 && ix < static_cast<long>(g.width)) {
              dst[static_cast<std::size_t>(ix)] += src[ox];
            }
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.opt.stride == 1 && g.opt.padding == 0;
}

}  // namespace detail

// Atrous convolution: out[o,y,x] = sum_{c,ky,kx} w[o,c,ky,kx] *
//   in[c, y*stride + ky*rate - padding, x*stride + kx*rate - padding] + bias[o].
// The tap sum runs over (c, ky, kx) in row-major order as a chain of fused
// multiply-adds; the bias is added last. `bias` may be undefined.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 Conv2dOptions opt = {}) {
  detail::require_rank(input, 4, "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  if (opt.rate < 1) throw ParameterError("conv2d: rate must be >= 1");
  if (opt.stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t batch = input.dim(0);
  const std::size_t out_ch = weight.dim(0);
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(input.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
    throw DimensionError("conv2d: bias shape " + to_string(bias.shape()) +
                         " does not match " + std::to_string(out_ch) + " outputs");
  }
  ConvGeometry g{input.dim(1), input.dim(2),  input.dim(3), weight.dim(2), weight.dim(3),
                 0,            0,             opt};
  g.out_h = conv_output_extent(g.height, g.kernel_h, opt);
  g.out_w = conv_output_extent(g.width, g.kernel_w, opt);

  Tensor<S> out({batch, out_ch, g.out_h, g.out_w});
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = out_ch * g.out_pixels();
  const bool pointwise = detail::is_pointwise(g);
  std::vector<S> col(pointwise ? 0 : g.taps() * g.out_pixels());
  for (std::size_t n = 0; n < batch; ++n) {
    const S* cols = input.data() + n * in_stride;
    if (!pointwise) {
      detail::im2col(input.data() + n * in_stride, g, col.data());
      cols = col.data();
    }
    S* y = out.data() + n * out_stride;
    kernels::gemm<S>(out_ch, g.out_pixels(), g.taps(), kernels::row_major(weight.data(), g.taps()),
                     kernels::row_major(cols, g.out_pixels()), y, g.out_pixels());
    if (bias.defined()) {
      for (std::size_t o = 0; o < out_ch; ++o) {
        const S b = bias[o];
        S* row = y + o * g.out_pixels();
        for (std::size_t p = 0; p < g.out_pixels(); ++p) row[p] += b;
      }
    }
  }

  if (auto* tape = detail::recording<S>({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record("conv2d", out, {input, weight, bias},
                 [out, input, weight, bias, g, batch, out_ch, in_stride, out_stride,
                  pointwise]() mutable {
                   const std::size_t P = g.out_pixels();
                   const std::size_t T = g.taps();
                   std::vector<S> col(pointwise ? 0 : T * P);
                   std::vector<S> dcol(T * P);
                   const S* dy_all = out.grad().data();
                   for (std::size_t n = 0; n < batch; ++n) {
                     const S* dy = dy_all + n * out_stride;
                     if (bias.defined() && bias.requires_grad()) {
                       auto db = bias.grad();
                       for (std::size_t o = 0; o < out_ch; ++o) {
                         S s = 0;
                         for (std::size_t p = 0; p < P; ++p) s += dy[o * P + p];
                         db[o] += s;
                       }
                     }
                     if (weight.requires_grad()) {
                       const S* cols = input.data() + n * in_stride;
                       if (!pointwise) {
                         detail::im2col(input.data() + n * in_stride, g, col.data());
                         cols = col.data();
                       }
                       kernels::gemm<S>(out_ch, T, P, kernels::row_major(dy, P),
                                        kernels::transposed(cols, P), weight.grad().data(), T,
                                        true);
                     }
                     if (input.requires_grad()) {
                       S* dx = input.grad().data() + n * in_stride;
                       if (pointwise) {
                         kernels::gemm<S>(T, P, out_ch, kernels::transposed(weight.data(), T),
                                          kernels::row_major(dy, P), dx, P, true);
                       } else {
                         kernels::gemm<S>(T, P, out_ch, kernels::transposed(weight.data(), T),
                                          kernels::row_major(dy, P), dcol.data(), P);
                         detail::col2im_add(dcol.data(), g, dx);
                       }
                     }
                   }
                 });
  }
  return detail::finish(std::move(out), "conv2d");
}

// ---------------------------------------------------------------------------
// Pooling

namespace detail {
template <typename S>
void check_pool(const Tensor<S>& x, std::size_t window, std::size_t stride, const char* op) {
  require_rank(x, 4, op);
  if (window < 1 || stride < 1) throw ParameterError(std::string(op) + ": window and stride must be >= 1");
  if (x.dim(2) % stride != 0 || x.dim(3) % stride != 0 || window > x.dim(2) ||
      window > x.dim(3)) {
    throw DimensionError(std::string(op) + ": extent " + to_string(x.shape()) +
                         " not divisible by stride " + std::to_string(stride));
  }
}
}  // namespace detail

// Window maximum. The adjoint routes to the first maximal cell in row-major order.
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x, std::size_t window, std::size_t stride) {
  detail::check_pool(x, window, stride, "maxpool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
  Tensor<S> out({N, C, Ho, Wo});
  std::vector<std::size_t> argmax(out.numel());
  const S* in = x.data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const S* plane = in + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        std::size_t best = (oy * stride) * W + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * stride + ky) * W + ox * stride + kx;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = (nc * Ho + oy) * Wo + ox;
        out[o] = plane[best];
        argmax[o] = nc * H * W + best;
      }
    }
  }
  if (BranchTrace::active()) {
    for (std::size_t a : argmax) detail::note_branch(a);
  }
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("maxpool2d", out, {x}, [out, x, argmax = std::move(argmax)]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
    });
  }
  return out;
}

// Window mean (sum in row-major order divided by the window size).
template <typename S>
Tensor<S> avgpool2d(const Tensor<S>& x, std::size_t window, std::size_t stride) {
  detail::check_pool(x, window, stride, "avgpool2d");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
  const S count = static_cast<S>(window * window);
  Tensor<S> out({N, C, Ho, Wo});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const S* plane = x.data() + nc * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        S s = 0;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            s += plane[(oy * stride + ky) * W + ox * stride + kx];
          }
        }
        out[(nc * Ho + oy) * Wo + ox] = s / count;
      }
    }
  }
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("avgpool2d", out, {x}, [out, x, window, stride, N, C, H, W, Ho, Wo, count]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const S g = dy[(nc * Ho + oy) * Wo + ox] / count;
            for (std::size_t ky = 0; ky < window; ++ky) {
              for (std::size_t kx = 0; kx < window; ++kx) {
                dx[nc * H * W + (oy * stride + ky) * W + ox * stride + kx] += g;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

// Per-channel normalization over batch and spatial axes. Train mode uses batch
// statistics and folds them into the running buffers; eval mode reads them.
template <typename S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S> running_mean, Tensor<S> running_var, Mode mode,
                      BatchNormOptions opt = {}) {
  detail::require_rank(x, 4, "batchnorm2d");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const std::size_t count = N * HW;
  if (count == 0) throw ParameterError("batchnorm2d: empty batch");
  for (const Tensor<S>* t : std::initializer_list<const Tensor<S>*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != C) {
      throw DimensionError("batchnorm2d: per-channel tensor of size " +
                           std::to_string(t->numel()) + " for " + std::to_string(C) + " channels");
    }
  }
  if (mode == Mode::Train && count < 2) {
    throw ParameterError("batchnorm2d: training needs more than one value per channel");
  }
  std::vector<S> mean(C), invstd(C);
  for (std::size_t c = 0; c < C; ++c) {
    if (mode == Mode::Train) {
      double s = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const S* p = x.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double v = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const S* p = x.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mu;
          v += d * d;
        }
      }
      const double var = v / static_cast<double>(count);
      mean[c] = static_cast<S>(mu);
      invstd[c] = static_cast<S>(1.0 / std::sqrt(var + opt.epsilon));
      running_mean[c] = static_cast<S>((1 - opt.momentum) * running_mean[c] + opt.momentum * mu);
      running_var[c] = static_cast<S>((1 - opt.momentum) * running_var[c] +
                                      opt.momentum * v / static_cast<double>(count - 1));
    } else {
      mean[c] = running_mean[c];
      invstd[c] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.epsilon));
    }
  }
  Tensor<S> out(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const S* p = x.data() + (n * C + c) * HW;
      S* q = out.data() + (n * C + c) * HW;
      const S scale = gamma[c] * invstd[c];
      for (std::size_t i = 0; i < HW; ++i) q[i] = (p[i] - mean[c]) * scale + beta[c];
    }
  }
  if (auto* tape = detail::recording<S>({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    tape->record("batchnorm2d", out, {x, gamma, beta},
                 [out, x, gamma, beta, mean, invstd, N, C, HW, count, mode]() mutable {
                   auto dy = out.grad();
                   for (std::size_t c = 0; c < C; ++c) {
                     double sum_dy = 0, sum_dy_xhat = 0;
                     for (std::size_t n = 0; n < N; ++n) {
                       const std::size_t base = (n * C + c) * HW;
                       for (std::size_t i = 0; i < HW; ++i) {
                         const double xhat = (x[base + i] - mean[c]) * invstd[c];
                         sum_dy += dy[base + i];
                         sum_dy_xhat += dy[base + i] * xhat;
                       }
                     }
                     if (gamma.requires_grad()) gamma.grad()[c] += static_cast<S>(sum_dy_xhat);
                     if (beta.requires_grad()) beta.grad()[c] += static_cast<S>(sum_dy);
                     if (!x.requires_grad()) continue;
                     auto dx = x.grad();
                     const double g = gamma[c];
                     const double inv = invstd[c];
                     for (std::size_t n = 0; n < N; ++n) {
                       const std::size_t base = (n * C + c) * HW;
                       for (std::size_t i = 0; i < HW; ++i) {
                         if (mode == Mode::Train) {
                           const double xhat = (x[base + i] - mean[c]) * inv;
                           const double m = static_cast<double>(count);
                           dx[base + i] += static_cast<S>(
                               g * inv / m * (m * dy[base + i] - sum_dy - xhat * sum_dy_xhat));
                         } else {
                           dx[base + i] += static_cast<S>(g * inv * dy[base + i]);
                         }
                       }
                     }
                   }
                 });
  }
  return detail::finish(std::move(out), "batchnorm2d");
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename S, typename P>
void note_pattern(const Tensor<S>& x, P side) {
  if (!BranchTrace::active()) return;
  for (std::size_t i = 0; i < x.numel(); ++i) note_branch(side(x[i]) ? 1 : 0);
}

// Applies f elementwise and records dx += dy * df(x, y).
template <typename S, typename F, typename DF>
Tensor<S> unary(const Tensor<S>& x, const char* op, F f, DF df) {
  Tensor<S> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  if (auto* tape = recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record(op, out, {x}, [out, x, df]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * df(x[i], out[i]);
    });
  }
  return finish(std::move(out), op);
}

}  // namespace detail

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  detail::note_pattern(x, [](S v) { return v > 0; });
  return detail::unary(
      x, "relu", [](S v) { return v > 0 ? v : S(0); },
      [](S v, S) { return v > 0 ? S(1) : S(0); });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope = S(0.2)) {
  detail::note_pattern(x, [](S v) { return v > 0; });
  return detail::unary(
      x, "leaky_relu", [slope](S v) { return v > 0 ? v : slope * v; },
      [slope](S v, S) { return v > 0 ? S(1) : slope; });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary(
      x, "sigmoid",
      [](S v) {
        if (v >= 0) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

// log(max(x, floor)); the gradient vanishes where the floor is active.
template <typename S>
Tensor<S> log_clamped(const Tensor<S>& x, S floor = S(1e-12)) {
  detail::note_pattern(x, [floor](S v) { return v > floor; });
  return detail::unary(
      x, "log_clamped", [floor](S v) { return std::log(std::max(v, floor)); },
      [floor](S v, S) { return v > floor ? S(1) / v : S(0); });
}

// min(0, x)
template <typename S>
Tensor<S> min_zero(const Tensor<S>& x) {
  detail::note_pattern(x, [](S v) { return v < 0; });
  return detail::unary(
      x, "min_zero", [](S v) { return v < 0 ? v : S(0); },
      [](S v, S) { return v < 0 ? S(1) : S(0); });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return detail::unary(
      x, "scale", [factor](S v) { return v * factor; }, [factor](S, S) { return factor; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S offset) {
  return detail::unary(
      x, "add_scalar", [offset](S v) { return v + offset; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (auto* tape = detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    tape->record("add", out, {a, b}, [out, a, b]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
      }
    });
  }
  return detail::finish(std::move(out), "add");
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (auto* tape = detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    tape->record("mul", out, {a, b}, [out, a, b]() mutable {
      auto dy = out.grad();
      if (a.requires_grad()) {
        auto da = a.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto db = b.grad();
        for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * a[i];
      }
    });
  }
  return detail::finish(std::move(out), "mul");
}

// |a - b| with zero subgradient at equality.
template <typename S>
Tensor<S> abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  detail::require_same_shape(a, b, "abs_diff");
  Tensor<S> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::abs(a[i] - b[i]);
  if (BranchTrace::active()) {
    for (std::size_t i = 0; i < a.numel(); ++i) detail::note_branch(a[i] > b[i] ? 1 : (a[i] < b[i] ? 2 : 0));
  }
  if (auto* tape = detail::recording<S>({&a, &b})) {
    out.set_requires_grad(true);
    tape->record("abs_diff", out, {a, b}, [out, a, b]() mutable {
      auto dy = out.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const S d = a[i] - b[i];
        const S s = d > 0 ? S(1) : (d < 0 ? S(-1) : S(0));
        if (a.requires_grad()) a.grad()[i] += dy[i] * s;
        if (b.requires_grad()) b.grad()[i] -= dy[i] * s;
      }
    });
  }
  return detail::finish(std::move(out), "abs_diff");
}

// Sum of all elements as a 1-element tensor, compensated (Neumaier).
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S s = 0, carry = 0;
  for (S v : x.values()) {
    const S t = s + v;
    carry += std::abs(s) >= std::abs(v) ? (s - t) + v : (v - t) + s;
    s = t;
  }
  Tensor<S> out = Tensor<S>::scalar(s + carry);
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("sum", out, {x}, [out, x]() mutable {
      const S g = out.grad()[0];
      for (auto& d : x.grad()) d += g;
    });
  }
  return detail::finish(std::move(out), "sum");
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.numel()));
}

// ---------------------------------------------------------------------------
// Dense layers

// y = x W^T + b for x (B x N), W (M x N), b (M); dot products accumulate by
// fused multiply-add in ascending input index, then the bias is added.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(weight, 2, "linear");
  const std::size_t B = x.dim(0), N = x.dim(1), M = weight.dim(0);
  if (weight.dim(1) != N) {
    throw DimensionError("linear: weight " + to_string(weight.shape()) + " vs input " +
                         to_string(x.shape()));
  }
  if (bias.defined() && bias.numel() != M) {
    throw DimensionError("linear: bias size " + std::to_string(bias.numel()) + " vs " +
                         std::to_string(M) + " outputs");
  }
  Tensor<S> out({B, M});
  kernels::gemm<S>(B, M, N, kernels::row_major(x.data(), N), kernels::transposed(weight.data(), N),
                   out.data(), M);
  if (bias.defined()) {
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < M; ++j) out[i * M + j] += bias[j];
    }
  }
  if (auto* tape = detail::recording<S>({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    tape->record("linear", out, {x, weight, bias}, [out, x, weight, bias, B, N, M]() mutable {
      const S* dy = out.grad().data();
      if (x.requires_grad()) {
        kernels::gemm<S>(B, N, M, kernels::row_major(dy, M), kernels::row_major(weight.data(), N),
                         x.grad().data(), N, true);
      }
      if (weight.requires_grad()) {
        kernels::gemm<S>(M, N, B, kernels::transposed(dy, M), kernels::row_major(x.data(), N),
                         weight.grad().data(), N, true);
      }
      if (bias.defined() && bias.requires_grad()) {
        auto db = bias.grad();
        for (std::size_t i = 0; i < B; ++i) {
          for (std::size_t j = 0; j < M; ++j) db[j] += dy[i * M + j];
        }
      }
    });
  }
  return detail::finish(std::move(out), "linear");
}

// ---------------------------------------------------------------------------
// Softmax over the channel axis (rank 4: per pixel; rank 2: per row).

template <typename S>
Tensor<S> softmax_channels(const Tensor<S>& x) {
  if (x.rank() != 4 && x.rank() != 2) {
    throw DimensionError("softmax_channels: expected rank 2 or 4, got " + to_string(x.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1);
  const std::size_t HW = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  Tensor<S> out(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const std::size_t base = n * C * HW;
    for (std::size_t p = 0; p < HW; ++p) {
      S m = -std::numeric_limits<S>::infinity();
      for (std::size_t c = 0; c < C; ++c) m = std::max(m, x[base + c * HW + p]);
      S s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const S e = std::exp(x[base + c * HW + p] - m);
        out[base + c * HW + p] = e;
        s += e;
      }
      for (std::size_t c = 0; c < C; ++c) out[base + c * HW + p] /= s;
    }
  }
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("softmax_channels", out, {x}, [out, x, N, C, HW]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = n * C * HW;
        for (std::size_t p = 0; p < HW; ++p) {
          S dot = 0;
          for (std::size_t c = 0; c < C; ++c) dot += dy[base + c * HW + p] * out[base + c * HW + p];
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = base + c * HW + p;
            dx[i] += out[i] * (dy[i] - dot);
          }
        }
      }
    });
  }
  return detail::finish(std::move(out), "softmax_channels");
}

// Align-corners bilinear resize. Inference only: never recorded.
template <typename S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, std::size_t out_h, std::size_t out_w) {
  detail::require_rank(x, 4, "bilinear_upsample");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (out_h < H || out_w < W) {
    throw ParameterError("bilinear_upsample: output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " smaller than input " + std::to_string(H) +
                         "x" + std::to_string(W));
  }
  auto coord = [](std::size_t o, std::size_t in, std::size_t out) {
    if (out == 1 || in == 1) return 0.0;
    return static_cast<double>(o) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  Tensor<S> out({N, C, out_h, out_w});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const S* plane = x.data() + nc * H * W;
    S* dst = out.data() + nc * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double fy = coord(oy, H, out_h);
      const std::size_t y0 = std::min(static_cast<std::size_t>(fy), H - 1);
      const std::size_t y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double fx = coord(ox, W, out_w);
        const std::size_t x0 = std::min(static_cast<std::size_t>(fx), W - 1);
        const std::size_t x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = plane[y0 * W + x0] * (1 - wx) + plane[y0 * W + x1] * wx;
        const double bottom = plane[y1 * W + x0] * (1 - wx) + plane[y1 * W + x1] * wx;
        dst[oy * out_w + ox] = static_cast<S>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return detail::finish(std::move(out), "bilinear_upsample");
}

// ---------------------------------------------------------------------------
// Structural

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (element_count(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor<S> out(std::move(shape), std::vector<S>(x.values().begin(), x.values().end()));
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("reshape", out, {x}, [out, x]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

// B x ... -> B x (prod of the rest)
template <typename S>
Tensor<S> flatten(const Tensor<S>& x) {
  return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)});
}

// Concatenate along axis 0 (batch). Trailing extents must agree.
template <typename S>
Tensor<S> concat_batch(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_batch: no inputs");
  Shape shape = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw DimensionError("concat_batch: " + to_string(p.shape()) + " vs " + to_string(shape));
    }
    total += p.dim(0);
  }
  shape[0] = total;
  Tensor<S> out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.data() + offset);
    offset += p.numel();
  }
  if (auto* tape = detail::recording<S>(parts)) {
    out.set_requires_grad(true);
    tape->record("concat_batch", out, parts, [out, parts]() mutable {
      auto dy = out.grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto dp = p.grad();
          for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dy[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

// Rows `indices` of axis 0, in the given order.
template <typename S>
Tensor<S> gather_batch(const Tensor<S>& x, const std::vector<std::size_t>& indices) {
  Shape shape = x.shape();
  const std::size_t row = x.numel() / x.dim(0);
  shape[0] = indices.size();
  Tensor<S> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.dim(0)) throw DimensionError("gather_batch: index out of range");
    std::copy(x.data() + indices[i] * row, x.data() + (indices[i] + 1) * row, out.data() + i * row);
  }
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("gather_batch", out, {x}, [out, x, indices, row]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        for (std::size_t j = 0; j < row; ++j) dx[indices[i] * row + j] += dy[i * row + j];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice_batch(const Tensor<S>& x, std::size_t start, std::size_t count) {
  if (start + count > x.dim(0)) throw DimensionError("slice_batch: range out of bounds");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
  return gather_batch(x, idx);
}

// Concatenate rank-4 tensors along the channel axis.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const std::size_t N = parts.front().dim(0), H = parts.front().dim(2), W = parts.front().dim(3);
  std::size_t C = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 4, "concat_channels");
    if (p.dim(0) != N || p.dim(2) != H || p.dim(3) != W) {
      throw DimensionError("concat_channels: " + to_string(p.shape()) + " vs " +
                           to_string(parts.front().shape()));
    }
    C += p.dim(1);
  }
  const std::size_t HW = H * W;
  Tensor<S> out({N, C, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p.dim(1);
      std::copy(p.data() + n * pc * HW, p.data() + (n + 1) * pc * HW, out.data() + (n * C + c0) * HW);
      c0 += pc;
    }
  }
  if (auto* tape = detail::recording<S>(parts)) {
    out.set_requires_grad(true);
    tape->record("concat_channels", out, parts, [out, parts, N, C, HW]() mutable {
      auto dy = out.grad();
      std::size_t c0 = 0;
      for (auto& p : parts) {
        const std::size_t pc = p.dim(1);
        if (p.requires_grad()) {
          auto dp = p.grad();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t i = 0; i < pc * HW; ++i) dp[n * pc * HW + i] += dy[(n * C + c0) * HW + i];
          }
        }
        c0 += pc;
      }
    });
  }
  return out;
}

// Channel `c` of a rank-4 tensor as B x 1 x H x W.
template <typename S>
Tensor<S> select_channel(const Tensor<S>& x, std::size_t c) {
  detail::require_rank(x, 4, "select_channel");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (c >= C) throw DimensionError("select_channel: channel out of range");
  Tensor<S> out({N, 1, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy(x.data() + (n * C + c) * HW, x.data() + (n * C + c + 1) * HW, out.data() + n * HW);
  }
  if (auto* tape = detail::recording<S>({&x})) {
    out.set_requires_grad(true);
    tape->record("select_channel", out, {x}, [out, x, N, C, HW, c]() mutable {
      auto dy = out.grad();
      auto dx = x.grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < HW; ++i) dx[(n * C + c) * HW + i] += dy[n * HW + i];
      }
    });
  }
  return out;
}

// out[b,c,i,j] = mask[b,0,i,j] * image[b,c,i,j]
template <typename S>
Tensor<S> broadcast_mask_mul(const Tensor<S>& mask, const Tensor<S>& image) {
  detail::require_rank(mask, 4, "broadcast_mask_mul");
  detail::require_rank(image, 4, "broadcast_mask_mul");
  if (mask.dim(1) != 1 || mask.dim(0) != image.dim(0) || mask.dim(2) != image.dim(2) ||
      mask.dim(3) != image.dim(3)) {
    throw DimensionError("broadcast_mask_mul: mask " + to_string(mask.shape()) + " vs image " +
                         to_string(image.shape()));
  }
  const std::size_t N = image.dim(0), C = image.dim(1), HW = image.dim(2) * image.dim(3);
  Tensor<S> out(image.shape());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < HW; ++i) {
        out[(n * C + c) * HW + i] = mask[n * HW + i] * image[(n * C + c) * HW + i];
      }
    }
  }
  if (auto* tape = detail::recording<S>({&mask, &image})) {
    out.set_requires_grad(true);
    tape->record("broadcast_mask_mul", out, {mask, image}, [out, mask, image, N, C, HW]() mutable {
      auto dy = out.grad();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t i = 0; i < HW; ++i) {
            const std::size_t k = (n * C + c) * HW + i;
            if (mask.requires_grad()) mask.grad()[n * HW + i] += dy[k] * image[k];
            if (image.requires_grad()) image.grad()[k] += dy[k] * mask[n * HW + i];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace dmac::ad
