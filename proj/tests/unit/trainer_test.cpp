#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dmac/trainer/trainer.hpp"

using namespace dmac;
using namespace dmac::train;
using ad::Shape;
using ad::Tensor;

namespace {

struct OneParam {
  ad::ParameterSet<double> ps;
  Tensor<double> w;
  explicit OneParam(std::vector<double> init) {
    w = ps.add_parameter("w", Tensor<double>(Shape{init.size()}, init));
  }
  void set_grad(const std::vector<double>& g) {
    auto dst = w.grad();
    std::copy(g.begin(), g.end(), dst.begin());
  }
};

const Dataset& small_set() {
  static const Dataset d = [] {
    data::SetOptions opt;
    opt.counts = {1, 1, 1};
    opt.seed = 5;
    return generate_dataset(opt, core::DmacConfig::toy());
  }();
  return d;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 3;
  c.seed = 17;
  return c;
}

std::vector<float> all_values(Trainer<float>& t) {
  std::vector<float> out;
  for (auto* ps : {&t.dmac().parameters(), &t.det().parameters(), &t.dis().parameters()}) {
    for (const auto& e : ps->entries()) out.insert(out.end(), e.tensor.values().begin(), e.tensor.values().end());
  }
  return out;
}

}  // namespace

TEST(Adam, FirstStepIsLearningRate) {
  OneParam p({0.0, 2.0});
  p.set_grad({1.0, -1.0});
  Adam<double> opt(1e-3);
  opt.step(p.ps);
  EXPECT_NEAR(p.w[0], -1e-3, 1e-9);
  EXPECT_NEAR(p.w[1], 2.0 + 1e-3, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  OneParam p({0.5, -0.25});
  Adam<double> opt(1e-2);
  opt.step(p.ps);  // no gradient allocated
  p.set_grad({0.0, 0.0});
  opt.step(p.ps);
  EXPECT_EQ(p.w[0], 0.5);
  EXPECT_EQ(p.w[1], -0.25);
}

TEST(Adam, TwoStepsMatchRecurrence) {
  OneParam p({1.0});
  Adam<double> opt(0.1);
  const double g = 0.3;
  double m = 0, v = 0, x = 1.0;
  for (int t = 1; t <= 2; ++t) {
    p.w.drop_grad();
    p.set_grad({g});
    opt.step(p.ps);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p.w[0], x, 1e-10);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adadelta, ClosedFormFirstStep) {
  const double g = 0.7, eps = 1e-6;
  OneParam p({0.0});
  p.set_grad({g});
  Adadelta<double> opt;
  opt.step(p.ps);
  EXPECT_NEAR(p.w[0], -std::sqrt(eps / (0.1 * g * g + eps)) * g, 1e-15);
}

TEST(Adadelta, ZeroGradientAndSign) {
  OneParam p({1.0, 1.0, 1.0});
  Adadelta<double> opt;
  p.set_grad({0.0, 2.0, -3.0});
  opt.step(p.ps);
  EXPECT_EQ(p.w[0], 1.0);
  EXPECT_LT(p.w[1], 1.0);
  EXPECT_GT(p.w[2], 1.0);
}

TEST(Optimizers, NonFiniteParameterIsReported) {
  OneParam p({1.0});
  p.set_grad({std::nan("")});
  Adam<double> opt(1e-3);
  try {
    opt.step(p.ps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
  }
}

TEST(Sampler, ThirdsWithRemainderToForeground) {
  StratifiedSampler s(small_set(), 1);
  EXPECT_EQ(s.quota(8), (std::array<std::size_t, 3>{3, 3, 2}));
  EXPECT_EQ(s.quota(24), (std::array<std::size_t, 3>{8, 8, 8}));
  const auto b = s.next(3);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(small_set().samples[b[0]].kind, data::PairKind::Foreground);
  EXPECT_EQ(small_set().samples[b[1]].kind, data::PairKind::Background);
  EXPECT_EQ(small_set().samples[b[2]].kind, data::PairKind::Negative);
}

TEST(Sampler, EmptyPoolSharesRedistributed) {
  Dataset d = small_set();
  std::erase_if(d.samples, [](const PairSample& s) { return s.kind == data::PairKind::Negative; });
  StratifiedSampler s(d, 1);
  EXPECT_EQ(s.quota(5), (std::array<std::size_t, 3>{3, 2, 0}));
}

TEST(Sampler, StateRestoreContinuesSequence) {
  StratifiedSampler a(small_set(), 9);
  a.next(4);
  StratifiedSampler b(small_set(), 1);
  b.restore(a.state());
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.next(4), b.next(4));
}

TEST(DatasetTest, ToyResolution) {
  const auto& d = small_set();
  ASSERT_EQ(d.size(), 9u);
  EXPECT_EQ(d.samples[0].image_a.size(), 3u * 64 * 64);
  EXPECT_EQ(d.samples[0].label_a.size(), 64u);
  for (auto v : channel_mean(d)) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const auto b = assemble<float>(d, {0, 2});
  EXPECT_EQ(b.raw_a.shape(), (Shape{2, 3, 64, 64}));
  EXPECT_EQ(b.gt_a.shape(), (Shape{2, 2, 8, 8}));
  EXPECT_EQ(b.positive, (std::vector<std::size_t>{0}));
  EXPECT_EQ(b.det_labels[3], 1.0f);  // row 1 is the negative pair
}

TEST(Checkpoint, EncodeDecodeIsByteStable) {
  CheckpointData c;
  c.meta = {{"k", 1}};
  const std::vector<float> v{1.5f, -2.0f, 3.25f, 0.0f};
  c.arrays.push_back(ArrayRecord::from<float>("a.weight", Shape{2, 2}, std::span<const float>(v)));
  const auto bytes = encode_checkpoint(c);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(back.find("a.weight")->values<float>(), v);
}

TEST(Checkpoint, DistinctLoadErrors) {
  CheckpointData c;
  const std::vector<double> v(10, 1.0);
  c.arrays.push_back(ArrayRecord::from<double>("x", Shape{10}, std::span<const double>(v)));
  const auto bytes = encode_checkpoint(c);

  EXPECT_THROW(decode_checkpoint("PNG junk\n"), ParseError);
  std::string wrong_version = bytes;
  wrong_version.replace(wrong_version.find(" 1\n"), 3, " 7\n");
  EXPECT_THROW(decode_checkpoint(wrong_version), VersionError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 5)), TruncatedError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, 20)), TruncatedError);
  std::string bad_meta = bytes;
  bad_meta.replace(bad_meta.find("meta {}"), 7, "meta {]");
  EXPECT_THROW(decode_checkpoint(bad_meta), ParseError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

TEST(TrainerTest, EmptyDatasetRejected) {
  EXPECT_THROW(Trainer<float>(quick_config(), empty_dataset(core::DmacConfig::toy())), ParameterError);
}

TEST(TrainerTest, InitialLossNearUniformBaseline) {
  Trainer<float> t(quick_config(), small_set());
  const double expected = 2 * 8 * 8 * std::log(2.0);
  EXPECT_NEAR(t.pretrain_step().ce, expected, 0.2 * expected);
}

TEST(TrainerTest, SameSeedSameLosses) {
  Trainer<float> a(quick_config(), small_set()), b(quick_config(), small_set());
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a.pretrain_step().ce, b.pretrain_step().ce);
  EXPECT_EQ(a.adversarial_step().total, b.adversarial_step().total);
  EXPECT_EQ(all_values(a), all_values(b));
}

TEST(TrainerTest, AdversarialUpdateOrder) {
  auto cfg = quick_config();
  cfg.k = 2;
  Trainer<float> t(cfg, small_set());
  const auto rec = t.adversarial_step();
  EXPECT_TRUE(rec.finite());
  const auto& ev = t.last_events();
  ASSERT_EQ(ev.size(), 5u);
  const char* order[] = {"det", "dis", "det", "dis", "dmac"};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(ev[i].network, order[i]);
  EXPECT_EQ(ev[4].det_version, 2u);
  EXPECT_EQ(ev[4].dis_version, 2u);
  EXPECT_EQ(ev[4].dmac_version, 0u);
  EXPECT_LE(rec.max_sigma, 1.05);
}

TEST(TrainerTest, ZeroWeightsGiveCrossEntropyObjective) {
  auto cfg = quick_config();
  cfg.lambda_det = cfg.lambda_dis = 0;
  Trainer<float> t(cfg, small_set());
  const auto rec = t.adversarial_step();
  EXPECT_EQ(rec.total, rec.ce);
  EXPECT_EQ(rec.det_g, 0.0);
  EXPECT_EQ(rec.dis_g, 0.0);
}

TEST(TrainerTest, ResumeIsBitwise) {
  const auto path = std::filesystem::temp_directory_path() / "dmac_trainer_resume.ckpt";
  Trainer<float> a(quick_config(), small_set());
  a.pretrain_step();
  a.adversarial_step();
  save_checkpoint(a.checkpoint(), path);

  Trainer<float> b(quick_config(), small_set());
  const auto loaded = load_checkpoint(path);
  b.restore(loaded);
  EXPECT_EQ(encode_checkpoint(b.checkpoint()), encode_checkpoint(loaded));
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(a.adversarial_step().total, b.adversarial_step().total);
  }
  EXPECT_EQ(a.pretrain_step().ce, b.pretrain_step().ce);
  EXPECT_EQ(all_values(a), all_values(b));
}

TEST(TrainerTest, RestoreRejectsForeignShapes) {
  Trainer<float> a(quick_config(), small_set());
  auto c = a.checkpoint();
  for (auto& arr : c.arrays) {
    if (arr.name == "dmac/head.rate1.out.bias") arr.shape = Shape{1, 2};
  }
  Trainer<float> b(quick_config(), small_set());
  EXPECT_THROW(b.restore(c), ShapeMismatchError);
  c.arrays.erase(c.arrays.begin());
  EXPECT_THROW(b.restore(c), ShapeMismatchError);
}
