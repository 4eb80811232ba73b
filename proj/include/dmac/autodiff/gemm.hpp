#pragma once

// Packed matrix multiply used by convolution and linear layers.
//
// Every output element is accumulated as a chain of fused multiply-adds over
// the inner index in ascending order, starting from zero. The vectorized
// paths and the scalar fallback therefore produce bitwise-identical results,
// and any direct loop written as `acc = fma(a_k, b_k, acc)` reproduces them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <type_traits>
#include <vector>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define DMAC_GEMM_AVX2 1
#endif

namespace dmac::ad::kernels {

// Strided read-only view: element (r, c) lives at data[r * row_stride + c * col_stride].
template <typename S>
struct MatrixView {
  const S* data;
  std::size_t row_stride;
  std::size_t col_stride;

  S operator()(std::size_t r, std::size_t c) const {
    return data[r * row_stride + c * col_stride];
  }
};

template <typename S>
MatrixView<S> row_major(const S* data, std::size_t cols) {
  return {data, cols, 1};
}

template <typename S>
MatrixView<S> transposed(const S* data, std::size_t cols_of_original) {
  return {data, 1, cols_of_original};
}

namespace detail {

template <typename S>
struct Tile;

template <>
struct Tile<float> {
  static constexpr std::size_t rows = 6;
  static constexpr std::size_t cols = 16;
};

template <>
struct Tile<double> {
  static constexpr std::size_t rows = 6;
  static constexpr std::size_t cols = 8;
};

#ifdef DMAC_GEMM_AVX2
inline void micro_kernel(std::size_t k_len, const float* a, const float* b, float* out) {
  __m256 c00 = _mm256_setzero_ps(), c01 = c00, c10 = c00, c11 = c00, c20 = c00,
         c21 = c00, c30 = c00, c31 = c00, c40 = c00, c41 = c00, c50 = c00, c51 = c00;
  for (std::size_t k = 0; k < k_len; ++k, a += 6, b += 16) {
    const __m256 b0 = _mm256_loadu_ps(b);
    const __m256 b1 = _mm256_loadu_ps(b + 8);
    __m256 x = _mm256_broadcast_ss(a + 0);
    c00 = _mm256_fmadd_ps(x, b0, c00);
    c01 = _mm256_fmadd_ps(x, b1, c01);
    x = _mm256_broadcast_ss(a + 1);
    c10 = _mm256_fmadd_ps(x, b0, c10);
    c11 = _mm256_fmadd_ps(x, b1, c11);
    x = _mm256_broadcast_ss(a + 2);
    c20 = _mm256_fmadd_ps(x, b0, c20);
    c21 = _mm256_fmadd_ps(x, b1, c21);
    x = _mm256_broadcast_ss(a + 3);
    c30 = _mm256_fmadd_ps(x, b0, c30);
    c31 = _mm256_fmadd_ps(x, b1, c31);
    x = _mm256_broadcast_ss(a + 4);
    c40 = _mm256_fmadd_ps(x, b0, c40);
    c41 = _mm256_fmadd_ps(x, b1, c41);
    x = _mm256_broadcast_ss(a + 5);
    c50 = _mm256_fmadd_ps(x, b0, c50);
    c51 = _mm256_fmadd_ps(x, b1, c51);
  }
  _mm256_storeu_ps(out + 0, c00);
  _mm256_storeu_ps(out + 8, c01);
  _mm256_storeu_ps(out + 16, c10);
  _mm256_storeu_ps(out + 24, c11);
  _mm256_storeu_ps(out + 32, c20);
  _mm256_storeu_ps(out + 40, c21);
  _mm256_storeu_ps(out + 48, c30);
  _mm256_storeu_ps(out + 56, c31);
  _mm256_storeu_ps(out + 64, c40);
  _mm256_storeu_ps(out + 72, c41);
  _mm256_storeu_ps(out + 80, c50);
  _mm256_storeu_ps(out + 88, c51);
}

inline void micro_kernel(std::size_t k_len, const double* a, const double* b, double* out) {
  __m256d c00 = _mm256_setzero_pd(), c01 = c00, c10 = c00, c11 = c00, c20 = c00,
          c21 = c00, c30 = c00, c31 = c00, c40 = c00, c41 = c00, c50 = c00, c51 = c00;
  for (std::size_t k = 0; k < k_len; ++k, a += 6, b += 8) {
    const __m256d b0 = _mm256_loadu_pd(b);
    const __m256d b1 = _mm256_loadu_pd(b + 4);
    __m256d x = _mm256_broadcast_sd(a + 0);
    c00 = _mm256_fmadd_pd(x, b0, c00);
    c01 = _mm256_fmadd_pd(x, b1, c01);
    x = _mm256_broadcast_sd(a + 1);
    c10 = _mm256_fmadd_pd(x, b0, c10);
    c11 = _mm256_fmadd_pd(x, b1, c11);
    x = _mm256_broadcast_sd(a + 2);
    c20 = _mm256_fmadd_pd(x, b0, c20);
    c21 = _mm256_fmadd_pd(x, b1, c21);
    x = _mm256_broadcast_sd(a + 3);
    c30 = _mm256_fmadd_pd(x, b0, c30);
    c31 = _mm256_fmadd_pd(x, b1, c31);
    x = _mm256_broadcast_sd(a + 4);
    c40 = _mm256_fmadd_pd(x, b0, c40);
    c41 = _mm256_fmadd_pd(x, b1, c41);
    x = _mm256_broadcast_sd(a + 5);
    c50 = _mm256_fmadd_pd(x, b0, c50);
    c51 = _mm256_fmadd_pd(x, b1, c51);
  }
  _mm256_storeu_pd(out + 0, c00);
  _mm256_storeu_pd(out + 4, c01);
  _mm256_storeu_pd(out + 8, c10);
  _mm256_storeu_pd(out + 12, c11);
  _mm256_storeu_pd(out + 16, c20);
  _mm256_storeu_pd(out + 20, c21);
  _mm256_storeu_pd(out + 24, c30);
  _mm256_storeu_pd(out + 28, c31);
  _mm256_storeu_pd(out + 32, c40);
  _mm256_storeu_pd(out + 36, c41);
  _mm256_storeu_pd(out + 40, c50);
  _mm256_storeu_pd(out + 44, c51);
}
#else
template <typename S>
void micro_kernel(std::size_t k_len, const S* a, const S* b, S* out) {
  constexpr std::size_t MR = Tile<S>::rows;
  constexpr std::size_t NR = Tile<S>::cols;
  S acc[MR][NR] = {};
  for (std::size_t k = 0; k < k_len; ++k, a += MR, b += NR) {
    for (std::size_t r = 0; r < MR; ++r) {
      for (std::size_t j = 0; j < NR; ++j) acc[r][j] = std::fma(a[r], b[j], acc[r][j]);
    }
  }
  for (std::size_t r = 0; r < MR; ++r) {
    for (std::size_t j = 0; j < NR; ++j) out[r * NR + j] = acc[r][j];
  }
}
#endif

}  // namespace detail

// C (M x N, leading dimension ldc) = A (M x K) * B (K x N), or C += A * B when
// `accumulate` is set (the product is formed first, then added).
template <typename S>
void gemm(std::size_t M, std::size_t N, std::size_t K, MatrixView<S> A,
          MatrixView<S> B, S* C, std::size_t ldc, bool accumulate = false) {
  static_assert(std::is_floating_point_v<S>);
  constexpr std::size_t MR = detail::Tile<S>::rows;
  constexpr std::size_t NR = detail::Tile<S>::cols;
  if (M == 0 || N == 0) return;
  if (K == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, S(0));
    }
    return;
  }

  const std::size_t row_panels = (M + MR - 1) / MR;
  std::vector<S> packed_a(row_panels * MR * K);
  for (std::size_t p = 0; p < row_panels; ++p) {
    S* dst = packed_a.data() + p * MR * K;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t r = 0; r < MR; ++r) {
        const std::size_t i = p * MR + r;
        dst[k * MR + r] = i < M ? A(i, k) : S(0);
      }
    }
  }

  std::vector<S> packed_b(K * NR);
  S tile[MR * NR];
  for (std::size_t j0 = 0; j0 < N; j0 += NR) {
    const std::size_t nr = std::min(NR, N - j0);
    for (std::size_t k = 0; k < K; ++k) {
      S* dst = packed_b.data() + k * NR;
      if (B.col_stride == 1 && nr == NR) {
        const S* src = B.data + k * B.row_stride + j0;
        std::copy(src, src + NR, dst);
      } else {
        for (std::size_t j = 0; j < nr; ++j) dst[j] = B(k, j0 + j);
        for (std::size_t j = nr; j < NR; ++j) dst[j] = S(0);
      }
    }
    for (std::size_t p = 0; p < row_panels; ++p) {
      detail::micro_kernel(K, packed_a.data() + p * MR * K, packed_b.data(), tile);
      const std::size_t mr = std::min(MR, M - p * MR);
      for (std::size_t r = 0; r < mr; ++r) {
        S* out = C + (p * MR + r) * ldc + j0;
        const S* src = tile + r * NR;
        if (accumulate) {
          for (std::size_t j = 0; j < nr; ++j) out[j] += src[j];
        } else {
          std::copy(src, src + nr, out);
        }
      }
    }
  }
}

}  // namespace dmac::ad::kernels
