#pragma once

// Spatially restricted correlation between two feature maps.
//
// For descriptors f_a, f_b (d x h x w) the raw volume has one channel per
// translation (i_t, j_t), index k = w * i_t + j_t:
//
//   c(i, j, k) = <f_a(i, j), f_b((i + i_t) mod h, (j + j_t) mod w)>
//
// and is summarized into T' + 2 maps: the mean over k, the max over k, and
// the T' = min(T, h*w) channels with the largest spatial sums (descending,
// lower k first on ties; sums are accumulated in ascending value order).
// The max and top-T selections are frozen in the adjoint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "dmac/autodiff/gemm.hpp"
#include "dmac/autodiff/ops.hpp"
#include "dmac/autodiff/tensor.hpp"

namespace dmac::core {

using ad::Shape;
using ad::Tensor;

inline constexpr std::size_t kDefaultTopT = 6;

namespace detail {

template <typename S>
void check_correlation_inputs(const Tensor<S>& fa, const Tensor<S>& fb) {
  if (!fa.defined() || !fb.defined() || fa.rank() != 4 || fb.rank() != 4) {
    throw DimensionError("correlate: expected B x d x h x w feature maps");
  }
  if (fa.shape() != fb.shape()) {
    throw DimensionError("correlate: shape mismatch " + ad::to_string(fa.shape()) + " vs " +
                         ad::to_string(fb.shape()));
  }
  if (fa.dim(1) == 0 || fa.dim(2) == 0 || fa.dim(3) == 0) {
    throw DimensionError("correlate: empty descriptor or spatial extent " +
                         ad::to_string(fa.shape()));
  }
}

// Gram matrix G[p][q] = <f_a(p), f_b(q)> for one batch element, each entry a
// fused multiply-add chain over ascending descriptor index.
template <typename S>
void gram(const S* fa, const S* fb, std::size_t d, std::size_t hw, S* g) {
  std::fill(g, g + hw * hw, S(0));
  for (std::size_t p = 0; p < hw; ++p) {
    S* row = g + p * hw;
    for (std::size_t c = 0; c < d; ++c) {
      const S a = fa[c * hw + p];
      const S* b = fb + c * hw;
      for (std::size_t q = 0; q < hw; ++q) row[q] = std::fma(a, b[q], row[q]);
    }
  }
}

// Pixel of f_b compared with pixel p of f_a under translation k.
inline std::size_t shifted_index(std::size_t p, std::size_t k, std::size_t h, std::size_t w) {
  const std::size_t i = p / w, j = p % w;
  const std::size_t it = k / w, jt = k % w;
  return ((i + it) % h) * w + (j + jt) % w;
}

// Sum taken in ascending value order, so channels holding the same values in
// a different spatial arrangement tie exactly. Self-correlation produces such
// pairs for every translation t and its inverse.
template <typename S>
S canonical_sum(const S* values, std::size_t n, std::vector<S>& scratch) {
  scratch.assign(values, values + n);
  std::sort(scratch.begin(), scratch.end());
  S s = 0;
  for (S v : scratch) s += v;
  return s;
}

// Channels ordered by descending spatial sum, ascending index on ties.
template <typename S>
std::vector<std::size_t> top_channels(const std::vector<S>& sums, std::size_t count) {
  std::vector<std::size_t> order(sums.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sums[a] > sums[b]; });
  order.resize(count);
  return order;
}

}  // namespace detail

// Raw correlation volume B x (h*w) x h x w. Not recorded.
template <typename S>
Tensor<S> correlation_volume(const Tensor<S>& fa, const Tensor<S>& fb) {
  detail::check_correlation_inputs(fa, fb);
  const std::size_t B = fa.dim(0), d = fa.dim(1), h = fa.dim(2), w = fa.dim(3), hw = h * w;
  Tensor<S> out({B, hw, h, w});
  std::vector<S> g(hw * hw);
  for (std::size_t n = 0; n < B; ++n) {
    detail::gram(fa.data() + n * d * hw, fb.data() + n * d * hw, d, hw, g.data());
    S* c = out.data() + n * hw * hw;
    for (std::size_t k = 0; k < hw; ++k) {
      for (std::size_t p = 0; p < hw; ++p) c[k * hw + p] = g[p * hw + detail::shifted_index(p, k, h, w)];
    }
  }
  return out;
}

// Summary maps [avg, max, top-T'] as B x (T' + 2) x h x w.
template <typename S>
Tensor<S> correlate(const Tensor<S>& fa, const Tensor<S>& fb, std::size_t top_t = kDefaultTopT) {
  detail::check_correlation_inputs(fa, fb);
  const std::size_t B = fa.dim(0), d = fa.dim(1), h = fa.dim(2), w = fa.dim(3), hw = h * w;
  const std::size_t T = std::min(top_t, hw);
  const std::size_t C = T + 2;
  Tensor<S> out({B, C, h, w});
  std::vector<std::size_t> argmax(B * hw);
  std::vector<std::size_t> selected(B * T);
  std::vector<S> g(hw * hw), c(hw * hw), sums(hw), scratch;
  const S count = static_cast<S>(hw);

  for (std::size_t n = 0; n < B; ++n) {
    detail::gram(fa.data() + n * d * hw, fb.data() + n * d * hw, d, hw, g.data());
    for (std::size_t k = 0; k < hw; ++k) {
      for (std::size_t p = 0; p < hw; ++p) c[k * hw + p] = g[p * hw + detail::shifted_index(p, k, h, w)];
    }
    S* o = out.data() + n * C * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      S total = 0;
      std::size_t best = 0;
      for (std::size_t k = 0; k < hw; ++k) {
        const S v = c[k * hw + p];
        total += v;
        if (v > c[best * hw + p]) best = k;
      }
      o[p] = total / count;
      o[hw + p] = c[best * hw + p];
      argmax[n * hw + p] = best;
    }
    for (std::size_t k = 0; k < hw; ++k) sums[k] = detail::canonical_sum(c.data() + k * hw, hw, scratch);
    const auto top = detail::top_channels(sums, T);
    for (std::size_t t = 0; t < T; ++t) {
      selected[n * T + t] = top[t];
      std::copy(c.begin() + top[t] * hw, c.begin() + (top[t] + 1) * hw, o + (2 + t) * hw);
    }
  }

  if (ad::BranchTrace::active()) {
    for (std::size_t v : argmax) ad::detail::note_branch(v);
    for (std::size_t v : selected) ad::detail::note_branch(v);
  }
  if (auto* tape = ad::detail::recording<S>({&fa, &fb})) {
    out.set_requires_grad(true);
    tape->record("correlate", out, {fa, fb},
                 [out, fa, fb, argmax, selected, B, d, h, w, hw, T, C, count]() mutable {
                   auto dy = out.grad();
                   std::vector<S> dg(hw * hw);
                   for (std::size_t n = 0; n < B; ++n) {
                     std::fill(dg.begin(), dg.end(), S(0));
                     const S* go = dy.data() + n * C * hw;
                     for (std::size_t p = 0; p < hw; ++p) {
                       const S g_avg = go[p] / count;
                       for (std::size_t k = 0; k < hw; ++k) {
                         dg[p * hw + detail::shifted_index(p, k, h, w)] += g_avg;
                       }
                       dg[p * hw + detail::shifted_index(p, argmax[n * hw + p], h, w)] += go[hw + p];
                       for (std::size_t t = 0; t < T; ++t) {
                         dg[p * hw + detail::shifted_index(p, selected[n * T + t], h, w)] +=
                             go[(2 + t) * hw + p];
                       }
                     }
                     // d f_a = f_b * dG^T, d f_b = f_a * dG
                     if (fa.requires_grad()) {
                       ad::kernels::gemm<S>(d, hw, hw, ad::kernels::row_major(fb.data() + n * d * hw, hw),
                                            ad::kernels::transposed(dg.data(), hw),
                                            fa.grad().data() + n * d * hw, hw, true);
                     }
                     if (fb.requires_grad()) {
                       ad::kernels::gemm<S>(d, hw, hw, ad::kernels::row_major(fa.data() + n * d * hw, hw),
                                            ad::kernels::row_major(dg.data(), hw),
                                            fb.grad().data() + n * d * hw, hw, true);
                     }
                   }
                 });
  }
  ad::require_finite(out, "correlate");
  return out;
}

// Direct transcription of the definition, used as an oracle for correlate().
template <typename S>
Tensor<S> correlate_naive(const Tensor<S>& fa, const Tensor<S>& fb, std::size_t top_t = kDefaultTopT) {
  detail::check_correlation_inputs(fa, fb);
  const std::size_t B = fa.dim(0), d = fa.dim(1), h = fa.dim(2), w = fa.dim(3);
  const std::size_t T = std::min(top_t, h * w);
  Tensor<S> out({B, T + 2, h, w});
  auto at = [&](const Tensor<S>& f, std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
    return f[((n * d + c) * h + i) * w + j];
  };
  for (std::size_t n = 0; n < B; ++n) {
    // c_ab(i, j, k)
    std::vector<S> raw(h * w * h * w);
    auto raw_at = [&](std::size_t i, std::size_t j, std::size_t k) -> S& {
      return raw[(k * h + i) * w + j];
    };
    for (std::size_t it = 0; it < h; ++it) {
      for (std::size_t jt = 0; jt < w; ++jt) {
        const std::size_t k = w * it + jt;
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t ib = (i + it) % h, jb = (j + jt) % w;
            S s = 0;
            for (std::size_t c = 0; c < d; ++c) s = std::fma(at(fa, n, c, i, j), at(fb, n, c, ib, jb), s);
            raw_at(i, j, k) = s;
          }
        }
      }
    }
    auto out_at = [&](std::size_t ch, std::size_t i, std::size_t j) -> S& {
      return out[((n * (T + 2) + ch) * h + i) * w + j];
    };
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        S total = 0;
        S best = raw_at(i, j, 0);
        for (std::size_t k = 0; k < h * w; ++k) {
          total += raw_at(i, j, k);
          best = std::max(best, raw_at(i, j, k));
        }
        out_at(0, i, j) = total / static_cast<S>(h * w);
        out_at(1, i, j) = best;
      }
    }
    std::vector<std::pair<S, std::size_t>> ranked;
    std::vector<S> scratch;
    for (std::size_t k = 0; k < h * w; ++k) {
      std::vector<S> values;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) values.push_back(raw_at(i, j, k));
      }
      ranked.emplace_back(detail::canonical_sum(values.data(), values.size(), scratch), k);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) out_at(2 + t, i, j) = raw_at(i, j, ranked[t].second);
      }
    }
  }
  return out;
}

// Three same-resolution backbone levels.
template <typename S>
struct FeaturePyramid {
  Tensor<S> f3, f4, f5;
};

// Per-image correlation features: for levels 3, 4, 5 in order,
// c_a gets [Corr(a, b), Corr(a, a)] and c_b gets [Corr(b, a), Corr(b, b)].
template <typename S>
struct CorrelationStack {
  Tensor<S> c_a, c_b;
};

template <typename S>
CorrelationStack<S> correlate_skip(const FeaturePyramid<S>& a, const FeaturePyramid<S>& b,
                                   std::size_t top_t = kDefaultTopT) {
  std::vector<Tensor<S>> parts_a, parts_b;
  for (auto level : {&FeaturePyramid<S>::f3, &FeaturePyramid<S>::f4, &FeaturePyramid<S>::f5}) {
    const Tensor<S>& fa = a.*level;
    const Tensor<S>& fb = b.*level;
    if (fa.rank() != 4 || fb.rank() != 4 || fa.dim(2) != fb.dim(2) || fa.dim(3) != fb.dim(3) ||
        fa.dim(2) != a.f3.dim(2) || fa.dim(3) != a.f3.dim(3)) {
      throw DimensionError("correlate_skip: pyramid levels must share one spatial extent");
    }
    parts_a.push_back(correlate(fa, fb, top_t));
    parts_a.push_back(correlate(fa, fa, top_t));
    parts_b.push_back(correlate(fb, fa, top_t));
    parts_b.push_back(correlate(fb, fb, top_t));
  }
  return {ad::concat_channels(parts_a), ad::concat_channels(parts_b)};
}

}  // namespace dmac::core
