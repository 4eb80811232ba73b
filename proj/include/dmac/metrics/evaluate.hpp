#pragma once

// Set evaluation: predict both masks of every manifest pair, score
// localization on correlated pairs at ground-truth resolution and
// detection over all pairs.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmac/core/dmac_net.hpp"
#include "dmac/datagen/generate.hpp"
#include "dmac/metrics/metrics.hpp"

namespace dmac::metrics {

// Tampered-class probabilities at the resolution of the inputs.
struct PairPrediction {
  std::size_t width = 0, height = 0;
  std::vector<double> tampered_a, tampered_b;
};

using Predictor = std::function<PairPrediction(const data::SplicePair&)>;

struct PairRow {
  std::string id, kind, difficulty;
  bool correlated = true;
  std::string error;  // empty when the pair was scored
  double score = 0;
  ConfusionCounts a, b;

  bool ok() const { return error.empty(); }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"id", id}, {"kind", kind}, {"difficulty", difficulty},
                        {"label", correlated ? "correlated" : "uncorrelated"}};
    if (!ok()) {
      j["error"] = error;
      return j;
    }
    j["score"] = score;
    if (correlated) {
      j["iou"] = {iou(a), iou(b)};
      j["mcc"] = {mcc(a), mcc(b)};
      j["nmm"] = {nmm(a), nmm(b)};
    }
    return j;
  }
};

struct LocalizationMeans {
  std::size_t masks = 0;
  double iou = 0, mcc = 0, nmm = 0;

  nlohmann::json to_json() const { return {{"masks", masks}, {"iou", iou}, {"mcc", mcc}, {"nmm", nmm}}; }
};

struct Summary {
  std::size_t pairs = 0, errors = 0;
  LocalizationMeans overall;
  std::map<std::string, LocalizationMeans> by_difficulty;
  std::optional<double> auc, eer;  // absent when only one class was scored
  PrecisionRecall detection;
  double threshold = 0.5;

  nlohmann::json to_json() const {
    nlohmann::json d = nlohmann::json::object();
    for (const auto& [k, v] : by_difficulty) d[k] = v.to_json();
    nlohmann::json j = {{"pairs", pairs},
                        {"errors", errors},
                        {"localization", overall.to_json()},
                        {"by_difficulty", d},
                        {"threshold", threshold},
                        {"precision", detection.precision},
                        {"recall", detection.recall},
                        {"f1", detection.f1}};
    j["auc"] = auc ? nlohmann::json(*auc) : nlohmann::json(nullptr);
    j["eer"] = eer ? nlohmann::json(*eer) : nlohmann::json(nullptr);
    return j;
  }
};

struct MetricsReport {
  std::vector<PairRow> rows;
  Summary summary;
};

// Means over both masks of every scored correlated pair; detection over all
// scored pairs. A score list with a single distinct value has AUC 0.5.
inline Summary summarize(const std::vector<PairRow>& rows, double threshold = 0.5) {
  Summary s;
  s.threshold = threshold;
  std::vector<double> scores;
  std::vector<int> labels;
  auto add = [](LocalizationMeans& m, const ConfusionCounts& c) {
    m.iou += iou(c);
    m.mcc += mcc(c);
    m.nmm += nmm(c);
    ++m.masks;
  };
  for (const auto& r : rows) {
    ++s.pairs;
    if (!r.ok()) {
      ++s.errors;
      continue;
    }
    scores.push_back(r.score);
    labels.push_back(r.correlated ? 1 : 0);
    if (!r.correlated) continue;
    for (const auto* c : {&r.a, &r.b}) {
      add(s.overall, *c);
      add(s.by_difficulty[r.difficulty], *c);
    }
  }
  auto finish = [](LocalizationMeans& m) {
    if (m.masks == 0) return;
    m.iou /= m.masks;
    m.mcc /= m.masks;
    m.nmm /= m.masks;
  };
  finish(s.overall);
  for (auto& [k, v] : s.by_difficulty) finish(v);

  const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
  if (both) {
    const bool single_value = std::all_of(scores.begin(), scores.end(), [&](double v) { return v == scores[0]; });
    s.auc = single_value ? 0.5 : roc_auc(scores, labels);
    s.eer = eer(scores, labels);
  }
  s.detection = precision_recall_f1(scores, labels, threshold);
  return s;
}

struct EvalOptions {
  double threshold = 0.5;
  std::optional<std::filesystem::path> dump_dir;  // predicted masks as gray PNGs
};

namespace detail {

inline std::vector<std::uint8_t> to_gray(const std::vector<double>& p) {
  std::vector<std::uint8_t> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    g[i] = static_cast<std::uint8_t>(std::lround(std::clamp(p[i], 0.0, 1.0) * 255));
  }
  return g;
}

}  // namespace detail

inline void write_mask_pngs(const PairPrediction& p, const std::filesystem::path& a, const std::filesystem::path& b) {
  if (a.has_parent_path()) std::filesystem::create_directories(a.parent_path());
  data::detail::write_file(a, data::encode_gray_png(detail::to_gray(p.tampered_a), p.width, p.height));
  data::detail::write_file(b, data::encode_gray_png(detail::to_gray(p.tampered_b), p.width, p.height));
}

// Rows follow manifest order. A pair that fails to load or predict becomes
// an error row; the report is produced regardless.
inline MetricsReport evaluate_manifest(const std::filesystem::path& dir, const Predictor& predict,
                                       const EvalOptions& opt = {}) {
  MetricsReport rep;
  for (const auto& e : data::read_manifest(dir)) {
    PairRow row{e.id, data::to_string(e.kind), data::to_string(e.difficulty), e.correlated};
    try {
      const auto pair = data::load_pair(dir, e);
      const auto pred = predict(pair);
      if (pred.width != pair.mask_p.width || pred.height != pair.mask_p.height) {
        throw DimensionError("prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                             " does not match ground truth");
      }
      row.score = detection_score(pred.tampered_a, pred.tampered_b);
      if (e.correlated) {
        row.a = confusion(binarize(pred.tampered_a, opt.threshold), pair.mask_p.bits);
        row.b = confusion(binarize(pred.tampered_b, opt.threshold), pair.mask_d.bits);
      }
      if (opt.dump_dir) {
        write_mask_pngs(pred, *opt.dump_dir / (e.id + "_probe_mask.png"), *opt.dump_dir / (e.id + "_donor_mask.png"));
      }
    } catch (const Error& ex) {
      row.error = ex.what();
    }
    rep.rows.push_back(std::move(row));
  }
  rep.summary = summarize(rep.rows, opt.threshold);
  return rep;
}

// Line-delimited rows followed by one {"summary": ...} line.
inline void write_report(const std::filesystem::path& path, const MetricsReport& rep) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  for (const auto& r : rep.rows) out << r.to_json().dump() << '\n';
  out << nlohmann::json{{"summary", rep.summary.to_json()}}.dump() << '\n';
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
}

// Images are box-downsampled to the network input, masks upsampled back.
template <typename S>
PairPrediction predict_pair(const core::DmacNet<S>& net, const data::Image& probe, const data::Image& donor) {
  if (probe.width != donor.width || probe.height != donor.height || probe.width != probe.height) {
    throw DimensionError("predict: probe and donor must be square and of equal size");
  }
  const std::size_t N = net.config().input_size;
  if (probe.width % N != 0) {
    throw DimensionError("predict: image size " + std::to_string(probe.width) + " is not a multiple of " +
                         std::to_string(N));
  }
  const std::size_t f = probe.width / N;
  auto tensor = [&](const data::Image& img) {
    const auto small = data::box_downsample(img, f);
    ad::Tensor<S> t({1, 3, N, N});
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < N * N; ++i) t[c * N * N + i] = small.rgb[i * 3 + c];
    }
    return net.normalize(t);
  };
  ad::NoGradScope<S> off;
  const auto out = net.forward(tensor(probe), tensor(donor), ad::Mode::Eval);
  PairPrediction p{probe.width, probe.height, {}, {}};
  for (auto [src, dst] : {std::pair{&out.y_a, &p.tampered_a}, std::pair{&out.y_b, &p.tampered_b}}) {
    const auto up = core::upsample_mask(*src, probe.width);
    const auto tampered = ad::select_channel(up, 1);
    dst->assign(tampered.values().begin(), tampered.values().end());
  }
  return p;
}

template <typename S>
Predictor model_predictor(const core::DmacNet<S>& net) {
  return [&net](const data::SplicePair& pair) { return predict_pair(net, pair.probe, pair.donor); };
}

}  // namespace dmac::metrics
