#include <random>

#include <gtest/gtest.h>

#include "dmac/cli/verification.hpp"
#include "dmac/core/correlation.hpp"
#include "test_support.hpp"

using namespace dmac;
using namespace dmac::core;
using ad::Shape;
using dmac::testing::random_tensor;

namespace {
Tensor<double> map2x2(double a, double b, double c, double d) {
  return Tensor<double>({1, 1, 2, 2}, std::vector<double>{a, b, c, d});
}
}  // namespace

TEST(Correlate, SinglePixelIsDotProduct) {
  Tensor<double> a({1, 3, 1, 1}, std::vector<double>{1, 2, 3});
  Tensor<double> b({1, 3, 1, 1}, std::vector<double>{4, -1, 0.5});
  auto c = correlate(a, b);
  ASSERT_EQ(c.shape(), (Shape{1, 3, 1, 1}));  // T' = min(6, 1)
  for (double v : c.values()) EXPECT_EQ(v, 3.5);
}

TEST(Correlate, HandEnumeratedTwoByTwo) {
  auto fa = map2x2(1, 2, 3, 4), fb = map2x2(1, 0, 0, 1);
  auto raw = correlation_volume(fa, fb);
  const double want_raw[4][4] = {{1, 0, 0, 4}, {0, 2, 3, 0}, {0, 2, 3, 0}, {1, 0, 0, 4}};
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(raw[k * 4 + p], want_raw[k][p]) << k << "," << p;

  auto c = correlate(fa, fb);
  ASSERT_EQ(c.shape(), (Shape{1, 6, 2, 2}));
  const double avg[4] = {0.5, 1, 1.5, 2}, mx[4] = {1, 2, 3, 4};
  for (std::size_t p = 0; p < 4; ++p) {
    EXPECT_EQ(c[p], avg[p]);
    EXPECT_EQ(c[4 + p], mx[p]);
  }
  // All channel sums tie at 5: channels kept in ascending index order.
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(c[(2 + t) * 4 + p], want_raw[t][p]);

  auto naive = correlate_naive(fa, fb);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(c[i], naive[i]);
}

TEST(Correlate, OnesGiveOnes) {
  Tensor<double> a({1, 1, 3, 3}, 1.0);
  auto c = correlate(a, a);
  for (double v : c.values()) EXPECT_EQ(v, 1.0);
}

TEST(Correlate, EqualsNaiveOnRandomInstances) {
  auto row = cli::correlation_oracle_check(100, 77);
  EXPECT_EQ(row.value, 0.0);
  std::mt19937_64 rng(5);
  auto a = random_tensor<double>({3, 8, 6, 6}, rng), b = random_tensor<double>({3, 8, 6, 6}, rng);
  auto fast = correlate(a, b), naive = correlate_naive(a, b);
  for (std::size_t i = 0; i < fast.numel(); ++i) ASSERT_EQ(fast[i], naive[i]);
}

TEST(Correlate, DepthOneAverageIsTranslationMean) {
  std::mt19937_64 rng(6);
  auto a = random_tensor<double>({1, 1, 4, 5}, rng), b = random_tensor<double>({1, 1, 4, 5}, rng);
  double mean_b = 0;
  for (double v : b.values()) mean_b += v;
  mean_b /= 20;
  auto c = correlate(a, b);
  for (std::size_t p = 0; p < 20; ++p) EXPECT_NEAR(c[p], a[p] * mean_b, 1e-6);
}

TEST(Correlate, ChannelIndexIsRowMajorTranslation) {
  std::mt19937_64 rng(7);
  for (std::size_t h = 1; h <= 4; ++h)
    for (std::size_t w = 1; w <= 4; ++w) {
      auto a = random_tensor<double>({1, 2, h, w}, rng), b = random_tensor<double>({1, 2, h, w}, rng);
      auto raw = correlation_volume(a, b);
      for (std::size_t it = 0; it < h; ++it)
        for (std::size_t jt = 0; jt < w; ++jt)
          for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t ib = (i + it) % h, jb = (j + jt) % w;
              double s = 0;
              for (std::size_t d = 0; d < 2; ++d) s = std::fma(a[(d * h + i) * w + j], b[(d * h + ib) * w + jb], s);
              EXPECT_EQ(raw[((w * it + jt) * h + i) * w + j], s);
            }
    }
}

TEST(Correlate, Errors) {
  EXPECT_THROW(correlate(Tensor<double>({1, 0, 2, 2}), Tensor<double>({1, 0, 2, 2})), DimensionError);
  EXPECT_THROW(correlate_naive(Tensor<double>({1, 0, 2, 2}), Tensor<double>({1, 0, 2, 2})), DimensionError);
  EXPECT_THROW(correlate(Tensor<double>({1, 2, 2, 2}), Tensor<double>({1, 2, 2, 3})), DimensionError);
}

TEST(CorrelateSkip, IdenticalPyramidsGiveIdenticalStacks) {
  std::mt19937_64 rng(8);
  FeaturePyramid<double> p{random_tensor<double>({2, 4, 3, 3}, rng), random_tensor<double>({2, 5, 3, 3}, rng),
                           random_tensor<double>({2, 6, 3, 3}, rng)};
  auto s = correlate_skip(p, p);
  ASSERT_EQ(s.c_a.shape(), (Shape{2, 48, 3, 3}));
  for (std::size_t i = 0; i < s.c_a.numel(); ++i) EXPECT_EQ(s.c_a[i], s.c_b[i]);
}

TEST(CorrelateSkip, ToyShapeAndSelfChannelIsSquaredNorm) {
  std::mt19937_64 rng(9);
  FeaturePyramid<double> a{random_tensor<double>({1, 32, 8, 8}, rng), random_tensor<double>({1, 64, 8, 8}, rng),
                           random_tensor<double>({1, 64, 8, 8}, rng)};
  FeaturePyramid<double> b{random_tensor<double>({1, 32, 8, 8}, rng), random_tensor<double>({1, 64, 8, 8}, rng),
                           random_tensor<double>({1, 64, 8, 8}, rng)};
  auto s = correlate_skip(a, b);
  ASSERT_EQ(s.c_a.shape(), (Shape{1, 48, 8, 8}));
  auto self = correlation_volume(a.f3, a.f3);
  for (std::size_t p = 0; p < 64; ++p) {
    double n = 0;
    for (std::size_t d = 0; d < 32; ++d) n += a.f3[d * 64 + p] * a.f3[d * 64 + p];
    EXPECT_NEAR(self[p], n, 1e-10);
    // c_a level 3 self block starts at channel 8; its max map bounds the norm.
    EXPECT_GE(s.c_a[(8 + 1) * 64 + p], self[p]);
  }
}

TEST(CorrelateSkip, MismatchedExtentsRejected) {
  FeaturePyramid<double> a{Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 2, 4, 4}), Tensor<double>({1, 2, 2, 2})};
  EXPECT_THROW(correlate_skip(a, a), DimensionError);
}
