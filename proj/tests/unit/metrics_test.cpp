#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "dmac/metrics/evaluate.hpp"

using namespace dmac;
using namespace dmac::metrics;
namespace fs = std::filesystem;

namespace {

using Bits = std::vector<std::uint8_t>;

// 4 x 4: TP = 2, FN = 2, FP = 1, TN = 11.
const Bits kGt{1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
const Bits kPred{1, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};

std::vector<double> as_probs(const data::Mask& m) { return {m.bits.begin(), m.bits.end()}; }

fs::path small_set_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dmac_metrics_set";
    fs::remove_all(d);
    data::SetOptions opt;
    opt.counts = {1, 1, 1};
    opt.seed = 2;
    data::write_set(d, opt);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Binarize, StrictThreshold) {
  const std::vector<double> half(6, 0.5), high(6, 0.7);
  EXPECT_EQ(binarize(half), Bits(6, 0));
  EXPECT_EQ(binarize(high), Bits(6, 1));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> mixed(100);
  for (auto& v : mixed) v = u(rng);
  const auto b = binarize(mixed, 0.3);
  for (std::size_t i = 0; i < mixed.size(); ++i) EXPECT_EQ(b[i], mixed[i] > 0.3 ? 1 : 0);
}

TEST(Localization, HandFixture) {
  const auto c = confusion(kPred, kGt);
  EXPECT_EQ(c.tp, 2u);
  EXPECT_EQ(c.fn, 2u);
  EXPECT_EQ(c.fp, 1u);
  EXPECT_EQ(c.tn, 11u);
  EXPECT_DOUBLE_EQ(iou(c), 0.4);
  EXPECT_DOUBLE_EQ(nmm(c), -0.25);
  EXPECT_NEAR(mcc(c), 20 / std::sqrt(1872.0), 1e-12);
  EXPECT_NEAR(mcc(c), 0.4623, 1e-4);
}

TEST(Localization, Conventions) {
  const auto same = confusion(kGt, kGt);
  EXPECT_EQ(iou(same), 1.0);
  EXPECT_EQ(mcc(same), 1.0);
  EXPECT_EQ(nmm(same), 1.0);

  const auto missed = confusion(Bits(16, 0), kGt);
  EXPECT_EQ(iou(missed), 0.0);
  EXPECT_EQ(nmm(missed), -1.0);
  EXPECT_EQ(mcc(missed), 0.0);

  const auto both_empty = confusion(Bits(16, 0), Bits(16, 0));
  EXPECT_EQ(iou(both_empty), 1.0);
  EXPECT_EQ(nmm(both_empty), 0.0);
  EXPECT_EQ(nmm(confusion(kGt, Bits(16, 0))), -1.0);
  EXPECT_THROW(confusion(Bits(3), Bits(4)), DimensionError);
}

TEST(Localization, PermutationInvariantAndBounded) {
  std::mt19937_64 rng(4);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    Bits p(64), g(64);
    for (auto& v : p) v = coin(rng);
    for (auto& v : g) v = coin(rng);
    std::vector<std::size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Bits pp(64), gp(64);
    for (std::size_t i = 0; i < 64; ++i) pp[i] = p[perm[i]], gp[i] = g[perm[i]];
    const auto c = confusion(p, g), cp = confusion(pp, gp);
    EXPECT_EQ(iou(c), iou(cp));
    EXPECT_EQ(mcc(c), mcc(cp));
    EXPECT_EQ(nmm(c), nmm(cp));
    EXPECT_GE(iou(c), 0.0);
    EXPECT_LE(iou(c), 1.0);
    EXPECT_GE(mcc(c), -1.0);
    EXPECT_LE(mcc(c), 1.0);
    EXPECT_GE(nmm(c), -1.0);
    EXPECT_LE(nmm(c), 1.0);
  }
}

TEST(Detection, ScoreExamples) {
  const std::vector<double> a(9, 0.7), low(9, 0.5), six(9, 0.6);
  EXPECT_NEAR(detection_score(a, a), 0.7, 1e-12);
  EXPECT_EQ(detection_score(low, low), 0.0);
  EXPECT_NEAR(detection_score(a, six), 0.65, 1e-12);
  const std::vector<double> partial{0.2, 0.9, 0.7};
  EXPECT_NEAR(detected_mean(partial), 0.8, 1e-12);
}

TEST(Ranking, PerfectSeparation) {
  const std::vector<double> s{0.9, 0.8, 0.1, 0.2};
  const std::vector<int> l{1, 1, 0, 0};
  EXPECT_EQ(roc_auc(s, l), 1.0);
  EXPECT_EQ(trapezoid_auc(s, l), 1.0);
  EXPECT_EQ(eer(s, l), 0.0);
}

TEST(Ranking, CountedPairs) {
  const std::vector<double> s{0.8, 0.2, 0.6, 0.4};
  const std::vector<int> l{1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(roc_auc(s, l), 0.5);
  EXPECT_DOUBLE_EQ(eer(s, l), 0.5);
}

TEST(Ranking, RankStatisticEqualsTrapezoid) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(200);
    std::vector<int> l(200);
    for (std::size_t i = 0; i < s.size(); ++i) {
      // Every other trial is quantized so ties occur.
      s[i] = trial % 2 ? std::round(u(rng) * 10) / 10 : u(rng);
      l[i] = coin(rng) ? 1 : 0;
    }
    l[0] = 1;
    l[1] = 0;
    EXPECT_NEAR(roc_auc(s, l), trapezoid_auc(s, l), 1e-10);
    if (trial % 2 == 0) {
      std::vector<double> neg(s.size());
      std::transform(s.begin(), s.end(), neg.begin(), [](double v) { return -v; });
      EXPECT_NEAR(roc_auc(s, l) + roc_auc(neg, l), 1.0, 1e-12);
    }
    const double e = eer(s, l);
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 1.0);
  }
}

TEST(Ranking, SingleClassUndefined) {
  const std::vector<double> s{0.1, 0.2};
  const std::vector<int> l{1, 1};
  EXPECT_THROW(roc_auc(s, l), UndefinedMetricError);
  EXPECT_THROW(eer(s, l), UndefinedMetricError);
}

TEST(PrecisionRecall, Examples) {
  const auto r = precision_recall_f1(2, 1, 2);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_NEAR(r.f1, 4.0 / 7, 1e-12);

  const std::vector<double> s{0.9, 0.8, 0.1};
  const std::vector<int> l{1, 1, 0};
  const auto perfect = precision_recall_f1(s, l, 0.5);
  EXPECT_EQ(perfect.precision, 1.0);
  EXPECT_EQ(perfect.recall, 1.0);
  EXPECT_EQ(perfect.f1, 1.0);

  const auto none = precision_recall_f1(s, l, 0.95);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
}

TEST(EvaluateSet, GroundTruthPredictorIsPerfect) {
  const auto rep = evaluate_manifest(small_set_dir(), [](const data::SplicePair& p) {
    return PairPrediction{p.probe.width, p.probe.height, as_probs(p.mask_p), as_probs(p.mask_d)};
  });
  ASSERT_EQ(rep.rows.size(), 9u);
  EXPECT_EQ(rep.summary.errors, 0u);
  EXPECT_EQ(rep.summary.overall.masks, 12u);
  EXPECT_EQ(rep.summary.overall.iou, 1.0);
  EXPECT_EQ(rep.summary.overall.mcc, 1.0);
  EXPECT_EQ(rep.summary.overall.nmm, 1.0);
  ASSERT_TRUE(rep.summary.auc);
  EXPECT_EQ(*rep.summary.auc, 1.0);
}

TEST(EvaluateSet, UniformHalfPredictor) {
  const auto rep = evaluate_manifest(small_set_dir(), [](const data::SplicePair& p) {
    const std::vector<double> half(p.probe.width * p.probe.height, 0.5);
    return PairPrediction{p.probe.width, p.probe.height, half, half};
  });
  for (const auto& r : rep.rows) EXPECT_EQ(r.score, 0.0);
  ASSERT_TRUE(rep.summary.auc);
  EXPECT_EQ(*rep.summary.auc, 0.5);
  EXPECT_EQ(rep.summary.overall.iou, 0.0);
}

TEST(EvaluateSet, ReaggregationFromRows) {
  std::mt19937_64 rng(3);
  const auto rep = evaluate_manifest(small_set_dir(), [&](const data::SplicePair& p) {
    std::uniform_real_distribution<double> u(0, 1);
    PairPrediction pred{p.probe.width, p.probe.height, as_probs(p.mask_p), as_probs(p.mask_d)};
    for (auto* m : {&pred.tampered_a, &pred.tampered_b}) {
      for (auto& v : *m) v = 0.6 * v + 0.5 * u(rng);
    }
    return pred;
  });
  double iou_sum = 0;
  std::size_t masks = 0;
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& r : rep.rows) {
    const auto j = r.to_json();
    scores.push_back(j["score"]);
    labels.push_back(j["label"] == "correlated");
    if (j.contains("iou")) {
      iou_sum += j["iou"][0].get<double>() + j["iou"][1].get<double>();
      masks += 2;
    }
  }
  EXPECT_NEAR(rep.summary.overall.iou, iou_sum / masks, 1e-12);
  EXPECT_NEAR(*rep.summary.auc, roc_auc(scores, labels), 1e-12);
}

TEST(EvaluateSet, MissingFileBecomesErrorRow) {
  const fs::path dir = fs::temp_directory_path() / "dmac_metrics_missing";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::copy(small_set_dir(), dir, fs::copy_options::recursive);
  const auto entries = data::read_manifest(dir);
  fs::remove(dir / entries[0].paths.mask_p);
  const auto dump = fs::temp_directory_path() / "dmac_metrics_dump";
  fs::remove_all(dump);
  const auto rep = evaluate_manifest(
      dir,
      [](const data::SplicePair& p) {
        return PairPrediction{p.probe.width, p.probe.height, as_probs(p.mask_p), as_probs(p.mask_d)};
      },
      {.threshold = 0.5, .dump_dir = dump});
  ASSERT_EQ(rep.rows.size(), 9u);
  EXPECT_FALSE(rep.rows[0].ok());
  EXPECT_EQ(rep.summary.errors, 1u);
  EXPECT_TRUE(fs::exists(dump / (entries[1].id + "_probe_mask.png")));
  const auto m = data::read_png_mask(dump / (entries[1].id + "_donor_mask.png"));
  EXPECT_EQ(m.width, data::kCanvas);

  const auto path = dir / "report.jsonl";
  write_report(path, rep);
  std::ifstream in(path);
  std::string line, last;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n, last = line;
  EXPECT_EQ(n, 10u);
  EXPECT_TRUE(nlohmann::json::parse(last).contains("summary"));
}

TEST(Predict, SymmetricAndFullResolution) {
  core::DmacNet<float> net(core::DmacConfig::toy(), 3);
  const auto img = data::synth_base_image(4).pixels;
  const auto p = predict_pair(net, img, img);
  EXPECT_EQ(p.width, data::kCanvas);
  EXPECT_EQ(p.tampered_a.size(), data::kCanvas * data::kCanvas);
  EXPECT_EQ(p.tampered_a, p.tampered_b);
}
