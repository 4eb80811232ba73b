#pragma once

// Set generation. Each foreground slot draws its transform once from its own
// seed; donors, hosts and regions are then redrawn until the pasted area
// lands in an open difficulty bucket. Only when no bucket is reachable are
// the transform values redrawn. Which transforms are present is never
// redrawn, so their frequencies follow the sampling law exactly.

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dmac/datagen/digest.hpp"
#include "dmac/datagen/pairs.hpp"
#include "dmac/datagen/png_io.hpp"

namespace dmac::data {

struct SetOptions {
  SetKind kind = SetKind::Combination;
  std::array<std::size_t, 3> counts{0, 0, 0};  // difficult, normal, easy
  std::uint64_t seed = 0;
  // Source pool; synthetic sources are drawn per slot when null.
  const std::vector<SourceImage>* sources = nullptr;
  std::size_t draws_per_slot = 8;
  std::size_t max_transform_redraws = 200;
};

struct TripletInfo {
  std::size_t index = 0;
  std::string id;
  std::uint64_t seed = 0;
  std::size_t transform_redraws = 0;
  std::string donor_source, host_source;
  std::size_t region = 0;
};

struct GenerationStats {
  std::size_t triplets = 0;
  std::size_t transform_redraws = 0;
};

using TripletSink = std::function<void(const TripletInfo&, const Triplet&)>;

namespace detail {

struct Draw {
  SourceImage donor, host;
  std::string donor_id, host_id;
};

inline std::string slot_id(std::size_t i) {
  std::ostringstream s;
  s << 't' << std::setw(6) << std::setfill('0') << i;
  return s.str();
}

}  // namespace detail

inline GenerationStats generate_triplets(const SetOptions& opt, const TripletSink& sink) {
  const std::size_t total = opt.counts[0] + opt.counts[1] + opt.counts[2];
  if (total == 0) throw ParameterError("generate: all bucket counts are zero");
  if (opt.sources && opt.sources->size() < 2) throw ParameterError("generate: need at least two source images");
  std::array<std::size_t, 3> remaining = opt.counts;
  GenerationStats stats;

  for (std::size_t slot = 0; slot < total; ++slot) {
    TripletInfo info;
    info.index = slot;
    info.id = detail::slot_id(slot);
    info.seed = mix_seed(opt.seed, slot);
    std::mt19937_64 rng(info.seed);

    // Draw k of this slot; pool picks come from the slot stream, so draws
    // must be requested in order.
    auto draw = [&](std::size_t k) {
      detail::Draw d;
      if (opt.sources) {
        std::uniform_int_distribution<std::size_t> pick(0, opt.sources->size() - 1);
        const std::size_t i = pick(rng);
        std::size_t j = pick(rng);
        while (j == i) j = pick(rng);
        d.donor = (*opt.sources)[i];
        d.host = (*opt.sources)[j];
        d.donor_id = "source:" + std::to_string(i);
        d.host_id = "source:" + std::to_string(j);
      } else {
        const std::uint64_t sd = mix_seed(info.seed, 2 * k + 1), sh = mix_seed(info.seed, 2 * k + 2);
        d.donor = synth_base_image(sd);
        d.host = synth_base_image(sh);
        d.donor_id = "synth:" + std::to_string(sd);
        d.host_id = "synth:" + std::to_string(sh);
      }
      return d;
    };

    std::optional<Triplet> made;
    TransformSpec spec;
    for (std::size_t redraw = 0; !made; ++redraw) {
      if (redraw > opt.max_transform_redraws) {
        throw ProgressError("generate: slot " + info.id + " found no admissible transform after " +
                            std::to_string(opt.max_transform_redraws) + " redraws");
      }
      info.transform_redraws = redraw;
      if (redraw == 0) spec = sample_transform(opt.kind, rng);
      else redraw_values(spec, opt.kind, rng);
      const double factor = area_factor(spec);

      // Every region of a draw is tried once; among admissible results the
      // bucket with the most open slots wins.
      for (std::size_t j = 0; j < opt.draws_per_slot && !made; ++j) {
        const auto d = draw(redraw * opt.draws_per_slot + j);
        // Either image of a draw may donate.
        for (int swap = 0; swap < 2; ++swap) {
          const SourceImage& donor = swap ? d.host : d.donor;
          const SourceImage& host = swap ? d.donor : d.host;
          for (std::size_t r = 0; r < donor.regions.size(); ++r) {
            if (donor.regions[r].fraction() * factor * 1.15 <= kMinRegionFraction) continue;
            auto t = make_triplet(donor, r, host, spec);
            if (!t) continue;
            const std::size_t open = remaining[static_cast<int>(t->difficulty)];
            if (open == 0) continue;
            if (made && remaining[static_cast<int>(made->difficulty)] >= open) continue;
            made = std::move(t);
            info.region = r;
            info.donor_source = swap ? d.host_id : d.donor_id;
            info.host_source = swap ? d.donor_id : d.host_id;
          }
        }
      }
    }
    --remaining[static_cast<int>(made->difficulty)];
    stats.transform_redraws += info.transform_redraws;
    ++stats.triplets;
    sink(info, *made);
  }
  return stats;
}

inline std::string pair_digest(const SplicePair& p) {
  Sha256 h;
  digest_into(h, p.probe);
  digest_into(h, p.donor);
  digest_into(h, p.mask_p);
  digest_into(h, p.mask_d);
  return h.hex();
}

struct PairPaths {
  std::string probe, donor, mask_p, mask_d;
};

inline PairPaths triplet_paths(const std::string& id, PairKind kind) {
  const std::string p = "images/" + id;
  switch (kind) {
    case PairKind::Foreground: return {p + "_composite.png", p + "_donor.png", p + "_fg_probe.png", p + "_fg_donor.png"};
    case PairKind::Background: return {p + "_composite.png", p + "_host.png", p + "_bg.png", p + "_bg.png"};
    case PairKind::Negative: return {p + "_donor.png", p + "_host.png", p + "_zero.png", p + "_zero.png"};
  }
  return {};
}

inline nlohmann::json manifest_record(const TripletInfo& info, SetKind set, const Triplet& t, const SplicePair& p) {
  const PairPaths paths = triplet_paths(info.id, p.kind);
  return {{"id", info.id + "-" + to_string(p.kind)},
          {"triplet", info.id},
          {"set", to_string(set)},
          {"kind", to_string(p.kind)},
          {"difficulty", to_string(t.difficulty)},
          {"area_fraction", t.area_fraction},
          {"label", p.correlated ? "correlated" : "uncorrelated"},
          {"paths", {{"probe", paths.probe}, {"donor", paths.donor}, {"mask_p", paths.mask_p}, {"mask_d", paths.mask_d}}},
          {"transform", to_json(t.transform)},
          {"seed", info.seed},
          {"sources", {{"donor", info.donor_source}, {"host", info.host_source}, {"region", info.region}}},
          {"digest", pair_digest(p)}};
}

// Manifest lines for every pair of a generated set, without touching disk.
inline std::vector<std::string> manifest_lines(const SetOptions& opt, GenerationStats* stats = nullptr,
                                               const TripletSink& also = {}) {
  std::vector<std::string> lines;
  auto s = generate_triplets(opt, [&](const TripletInfo& info, const Triplet& t) {
    for (const SplicePair* p : {&t.foreground, &t.background, &t.negative}) {
      lines.push_back(manifest_record(info, opt.kind, t, *p).dump());
    }
    if (also) also(info, t);
  });
  if (stats) *stats = s;
  return lines;
}

inline nlohmann::json set_summary(const SetOptions& opt, const GenerationStats& stats) {
  return {{"set", to_string(opt.kind)},
          {"counts", {{"difficult", opt.counts[0]}, {"normal", opt.counts[1]}, {"easy", opt.counts[2]}}},
          {"seed", opt.seed},
          {"image_size", kCanvas},
          {"pairs", 3 * stats.triplets},
          {"transform_redraws", stats.transform_redraws}};
}

// Writes images/, manifest.jsonl and set.json under `dir`.
inline GenerationStats write_set(const std::filesystem::path& dir, const SetOptions& opt) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  GenerationStats stats;
  auto lines = manifest_lines(opt, &stats, [&](const TripletInfo& info, const Triplet& t) {
    const auto fg = triplet_paths(info.id, PairKind::Foreground);
    const auto bg = triplet_paths(info.id, PairKind::Background);
    const auto ng = triplet_paths(info.id, PairKind::Negative);
    write_png(dir / fg.probe, t.foreground.probe);
    write_png(dir / fg.donor, t.foreground.donor);
    write_png(dir / bg.donor, t.background.donor);
    write_png(dir / fg.mask_p, t.foreground.mask_p);
    write_png(dir / fg.mask_d, t.foreground.mask_d);
    write_png(dir / bg.mask_p, t.background.mask_p);
    write_png(dir / ng.mask_p, t.negative.mask_p);
  });
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  for (const auto& l : lines) manifest << l << '\n';
  std::ofstream summary(dir / "set.json", std::ios::binary);
  summary << set_summary(opt, stats).dump(2) << '\n';
  if (!manifest || !summary) throw IoError("cannot write manifest under '" + dir.string() + "'");
  return stats;
}

struct ManifestEntry {
  std::string id, triplet;
  PairKind kind = PairKind::Foreground;
  Difficulty difficulty = Difficulty::Difficult;
  double area_fraction = 0;
  bool correlated = true;
  PairPaths paths;
  TransformSpec transform;
  std::string digest;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.jsonl");
  if (!in) throw IoError("no manifest.jsonl in '" + dir.string() + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.triplet = j.value("triplet", "");
      e.kind = parse_pair_kind(j.at("kind").get<std::string>());
      e.difficulty = parse_difficulty(j.at("difficulty").get<std::string>());
      e.area_fraction = j.value("area_fraction", 0.0);
      e.correlated = j.at("label").get<std::string>() == "correlated";
      const auto& p = j.at("paths");
      e.paths = {p.at("probe"), p.at("donor"), p.at("mask_p"), p.at("mask_d")};
      e.transform = transform_from_json(j.at("transform"));
      e.digest = j.value("digest", "");
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError("manifest line " + std::to_string(n) + ": " + ex.what());
    }
  }
  return out;
}

inline SplicePair load_pair(const std::filesystem::path& dir, const ManifestEntry& e) {
  SplicePair p;
  p.probe = read_png_rgb(dir / e.paths.probe);
  p.donor = read_png_rgb(dir / e.paths.donor);
  p.mask_p = read_png_mask(dir / e.paths.mask_p);
  p.mask_d = read_png_mask(dir / e.paths.mask_d);
  p.correlated = e.correlated;
  p.kind = e.kind;
  return p;
}

// Every referenced file exists and decodes to the recorded digest. Returns
// one message per problem.
inline std::vector<std::string> verify_set(const std::filesystem::path& dir) {
  std::vector<std::string> problems;
  for (const auto& e : read_manifest(dir)) {
    try {
      const std::string d = pair_digest(load_pair(dir, e));
      if (d != e.digest) problems.push_back(e.id + ": digest mismatch");
    } catch (const Error& ex) {
      problems.push_back(e.id + ": " + ex.what());
    }
  }
  return problems;
}

}  // namespace dmac::data
