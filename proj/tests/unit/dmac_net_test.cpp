#include <random>

#include <gtest/gtest.h>

#include "dmac/core/dmac_net.hpp"
#include "test_support.hpp"

using namespace dmac;
using namespace dmac::core;
using ad::Mode;
using ad::Shape;
using dmac::testing::random_tensor;

namespace {
Tensor<double> random_image(std::size_t b, std::size_t s, std::mt19937_64& rng) {
  auto t = random_tensor<double>({b, 3, s, s}, rng, 127.5);
  for (auto& v : t.values()) v += 127.5;
  return t;
}
}  // namespace

TEST(Backbone, ToyPyramidShapes) {
  DmacNet<double> net(DmacConfig::toy(), 1);
  std::mt19937_64 rng(1);
  auto pyr = net.extract_features(net.normalize(random_image(2, 64, rng)));
  EXPECT_EQ(pyr.f3.shape(), (Shape{2, 32, 8, 8}));
  EXPECT_EQ(pyr.f4.shape(), (Shape{2, 64, 8, 8}));
  EXPECT_EQ(pyr.f5.shape(), (Shape{2, 64, 8, 8}));
}

TEST(Backbone, PaperPresetGivesThirtyTwoSquareLevels) {
  DmacNet<float> net(DmacConfig::paper(), 2);
  auto pyr = net.extract_features(Tensor<float>({1, 3, 256, 256}, 0.1f));
  EXPECT_EQ(pyr.f3.shape(), (Shape{1, 256, 32, 32}));
  EXPECT_EQ(pyr.f4.shape(), (Shape{1, 512, 32, 32}));
  EXPECT_EQ(pyr.f5.shape(), (Shape{1, 512, 32, 32}));
  auto masks = net.forward(Tensor<float>({1, 3, 256, 256}, 0.1f), Tensor<float>({1, 3, 256, 256}, -0.2f), Mode::Eval);
  EXPECT_EQ(masks.y_a.shape(), (Shape{1, 2, 32, 32}));
  EXPECT_EQ(upsample_mask(masks.y_a, 256).shape(), (Shape{1, 2, 256, 256}));
}

TEST(Backbone, ZeroImageIsFinite) {
  DmacNet<double> net(DmacConfig::toy(), 3);
  auto pyr = net.extract_features(Tensor<double>({1, 3, 64, 64}));
  EXPECT_TRUE(ad::all_finite(pyr.f5.values()));
}

TEST(Backbone, RejectsExtentNotDivisibleByEight) {
  DmacNet<double> net(DmacConfig::toy(), 3);
  EXPECT_THROW(net.extract_features(Tensor<double>({1, 3, 60, 60})), DimensionError);
  auto cfg = DmacConfig::toy();
  cfg.input_size = 60;
  EXPECT_THROW(DmacNet<double>(cfg, 1), DimensionError);
}

TEST(AsppHead, ZeroInputGivesSpatiallyConstantLogits) {
  DmacNet<double> net(DmacConfig::toy(), 4);
  auto logits = net.aspp_head(Tensor<double>({2, 48, 8, 8}), Mode::Eval);
  ASSERT_EQ(logits.shape(), (Shape{2, 2, 8, 8}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t p = 0; p < 64; ++p) EXPECT_EQ(logits[c * 64 + p], logits[c * 64]);
}

TEST(AsppHead, SingleRateOneBranch) {
  auto cfg = DmacConfig::toy();
  cfg.aspp_rates = {1};
  DmacNet<double> net(cfg, 5);
  std::mt19937_64 rng(5);
  auto logits = net.aspp_head(random_tensor<double>({1, 48, 8, 8}, rng), Mode::Train);
  EXPECT_EQ(logits.shape(), (Shape{1, 2, 8, 8}));
}

TEST(AsppHead, RateBeyondExtentRejected) {
  auto cfg = DmacConfig::toy();
  cfg.aspp_rates = {1, 16};
  EXPECT_THROW(DmacNet<double>(cfg, 1), ParameterError);
  DmacNet<double> net(DmacConfig::toy(), 1);
  EXPECT_THROW(net.aspp_head(Tensor<double>({1, 48, 4, 4}), Mode::Eval), ParameterError);
}

TEST(DmacForward, ProbabilitiesAndSymmetry) {
  DmacNet<double> net(DmacConfig::toy(), 6);
  std::mt19937_64 rng(6);
  auto a = net.normalize(random_image(3, 64, rng)), b = net.normalize(random_image(3, 64, rng));
  for (auto mode : {Mode::Eval, Mode::Train}) {
    auto ab = net.forward(a, b, mode);
    auto ba = net.forward(b, a, mode);
    for (std::size_t i = 0; i < ab.y_a.numel(); ++i) {
      EXPECT_NEAR(ab.y_a[i], ba.y_b[i], 1e-6);
      EXPECT_NEAR(ab.y_b[i], ba.y_a[i], 1e-6);
      EXPECT_GT(ab.y_a[i], 0.0);
      EXPECT_LT(ab.y_a[i], 1.0);
    }
    for (std::size_t p = 0; p < 3 * 64; ++p) {
      const std::size_t n = p / 64, q = p % 64;
      EXPECT_NEAR(ab.y_a[(n * 2) * 64 + q] + ab.y_a[(n * 2 + 1) * 64 + q], 1.0, 1e-6);
    }
  }
}

TEST(DmacForward, IdenticalInputsGiveIdenticalMasks) {
  DmacNet<double> net(DmacConfig::toy(), 7);
  std::mt19937_64 rng(7);
  auto a = net.normalize(random_image(1, 64, rng));
  auto m = net.forward(a, a, Mode::Eval);
  for (std::size_t i = 0; i < m.y_a.numel(); ++i) EXPECT_NEAR(m.y_a[i], m.y_b[i], 1e-6);
}

TEST(DmacForward, InitialPredictionIsNearUniform) {
  DmacNet<double> net(DmacConfig::toy(), 8);
  std::mt19937_64 rng(8);
  auto m = net.forward(net.normalize(random_image(2, 64, rng)), net.normalize(random_image(2, 64, rng)), Mode::Train);
  for (double v : m.y_a.values()) EXPECT_NEAR(v, 0.5, 0.1);
}

TEST(UpsampleMask, ConstantAndPartitionOfUnity) {
  Tensor<double> c({1, 2, 4, 4}, 0.5);
  auto big = upsample_mask(c, 32);
  for (double v : big.values()) EXPECT_EQ(v, 0.5);
  std::mt19937_64 rng(9);
  auto logits = random_tensor<double>({1, 2, 8, 8}, rng, 3.0);
  auto probs = ad::softmax_channels(logits);
  auto up = upsample_mask(probs, 64);
  for (std::size_t p = 0; p < 64 * 64; ++p) EXPECT_NEAR(up[p] + up[64 * 64 + p], 1.0, 1e-6);
}
