#pragma once

// One pasted region yields three pairs: foreground (composite, donor),
// background (composite, host) and negative (donor, host).

#include <optional>
#include <string>

#include "dmac/datagen/transform.hpp"

namespace dmac::data {

enum class PairKind { Foreground, Background, Negative };
enum class Difficulty { Difficult, Normal, Easy };

inline const char* to_string(PairKind k) {
  return k == PairKind::Foreground ? "foreground" : k == PairKind::Background ? "background" : "negative";
}

inline PairKind parse_pair_kind(const std::string& s) {
  if (s == "foreground") return PairKind::Foreground;
  if (s == "background") return PairKind::Background;
  if (s == "negative") return PairKind::Negative;
  throw ParseError("unknown pair kind '" + s + "'");
}

inline const char* to_string(Difficulty d) {
  return d == Difficulty::Difficult ? "difficult" : d == Difficulty::Normal ? "normal" : "easy";
}

inline Difficulty parse_difficulty(const std::string& s) {
  if (s == "difficult") return Difficulty::Difficult;
  if (s == "normal") return Difficulty::Normal;
  if (s == "easy") return Difficulty::Easy;
  throw ParseError("unknown difficulty '" + s + "'");
}

// (0.01, 0.1] difficult, (0.1, 0.25] normal, (0.25, 0.5) easy.
inline Difficulty classify_difficulty(double fraction) {
  if (!(fraction > kMinRegionFraction && fraction < kMaxRegionFraction)) {
    throw ValidationError("area fraction " + std::to_string(fraction) + " outside (0.01, 0.5)");
  }
  if (fraction <= 0.1) return Difficulty::Difficult;
  if (fraction <= 0.25) return Difficulty::Normal;
  return Difficulty::Easy;
}

struct SplicePair {
  Image probe, donor;
  Mask mask_p, mask_d;
  bool correlated = true;
  PairKind kind = PairKind::Foreground;
};

struct Triplet {
  SplicePair foreground, background, negative;
  TransformSpec transform;
  double area_fraction = 0;  // pasted region over the composite
  Difficulty difficulty = Difficulty::Difficult;
};

// Pastes donor region `region_idx` into the host under `spec`. Returns
// nullopt when the pasted area leaves (1%, 50%) or falls off the canvas.
inline std::optional<Triplet> make_triplet(const SourceImage& donor, std::size_t region_idx,
                                           const SourceImage& host, const TransformSpec& spec) {
  if (region_idx >= donor.regions.size()) throw ParameterError("make_triplet: region index out of range");
  if (donor.pixels.width != host.pixels.width || donor.pixels.height != host.pixels.height) {
    throw DimensionError("make_triplet: donor and host extents differ");
  }
  const Mask& region = donor.regions[region_idx];
  auto moved = apply_transform(donor.pixels, region, spec);
  if (!moved) return std::nullopt;
  const double f = moved->mask.fraction();
  if (!(f > kMinRegionFraction && f < kMaxRegionFraction)) return std::nullopt;

  Image composite = host.pixels;
  for (std::size_t i = 0; i < moved->mask.bits.size(); ++i) {
    if (!moved->mask.bits[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) composite.rgb[i * 3 + c] = moved->pixels.rgb[i * 3 + c];
  }
  const std::size_t W = host.pixels.width, H = host.pixels.height;
  Triplet t;
  t.transform = spec;
  t.area_fraction = f;
  t.difficulty = classify_difficulty(f);
  t.foreground = {composite, donor.pixels, moved->mask, region, true, PairKind::Foreground};
  const Mask rest = complement(moved->mask);
  t.background = {composite, host.pixels, rest, rest, true, PairKind::Background};
  t.negative = {donor.pixels, host.pixels, Mask(W, H), Mask(W, H), false, PairKind::Negative};
  return t;
}

}  // namespace dmac::data
