#pragma once

// Region transformations for splicing. A region is resampled about its
// centroid through scale -> width deformation -> rotation, then brightened
// and finally shifted by an integer offset.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>

#include "dmac/datagen/image.hpp"
#include "dmac/datagen/synth.hpp"

namespace dmac::data {

struct Interval {
  double lo, hi;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

inline constexpr int kMaxShift = 127;
inline constexpr Interval kRotationDeg{-30, 30};
inline constexpr Interval kScale{0.5, 4};
inline constexpr Interval kLuminance{-32, 32};
inline constexpr Interval kDeformWidth{0.5, 2};

struct TransformSpec {
  int dx = 0, dy = 0;
  std::optional<double> rotation_deg, scale, luminance, deform_width;

  bool is_identity() const {
    return dx == 0 && dy == 0 && !rotation_deg && !scale && !luminance && !deform_width;
  }
  bool within_intervals() const {
    auto ok = [](const std::optional<double>& v, Interval i) { return !v || i.contains(*v); };
    return std::abs(dx) <= kMaxShift && std::abs(dy) <= kMaxShift && ok(rotation_deg, kRotationDeg) &&
           ok(scale, kScale) && ok(luminance, kLuminance) && ok(deform_width, kDeformWidth);
  }
  bool operator==(const TransformSpec&) const = default;
};

inline nlohmann::json to_json(const TransformSpec& t) {
  nlohmann::json j{{"dx", t.dx}, {"dy", t.dy}};
  auto put = [&](const char* k, const std::optional<double>& v) { j[k] = v ? nlohmann::json(*v) : nlohmann::json(); };
  put("rotation_deg", t.rotation_deg);
  put("scale", t.scale);
  put("luminance", t.luminance);
  put("deform_width", t.deform_width);
  return j;
}

inline TransformSpec transform_from_json(const nlohmann::json& j) {
  TransformSpec t;
  t.dx = j.at("dx").get<int>();
  t.dy = j.at("dy").get<int>();
  auto get = [&](const char* k) -> std::optional<double> {
    if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  t.rotation_deg = get("rotation_deg");
  t.scale = get("scale");
  t.luminance = get("luminance");
  t.deform_width = get("deform_width");
  return t;
}

enum class SetKind { Combination, Raw, Shift, Rotation, Scale, Luminance, Deformation };

inline const char* to_string(SetKind k) {
  switch (k) {
    case SetKind::Combination: return "combination";
    case SetKind::Raw: return "raw";
    case SetKind::Shift: return "shift";
    case SetKind::Rotation: return "rotation";
    case SetKind::Scale: return "scale";
    case SetKind::Luminance: return "luminance";
    case SetKind::Deformation: return "deformation";
  }
  return "?";
}

inline SetKind parse_set_kind(const std::string& s) {
  for (auto k : {SetKind::Combination, SetKind::Raw, SetKind::Shift, SetKind::Rotation, SetKind::Scale,
                 SetKind::Luminance, SetKind::Deformation}) {
    if (s == to_string(k)) return k;
  }
  throw ParameterError("unknown set kind '" + s + "'");
}

// Combination: random shift, each optional transform with probability 1/2.
// Redraws the shift (where the kind has one) and the value of every
// transform already present, leaving the set of transforms unchanged.
template <typename Rng>
void redraw_values(TransformSpec& t, SetKind kind, Rng& rng) {
  std::uniform_int_distribution<int> shift(-kMaxShift, kMaxShift);
  auto draw = [&](Interval i) { return std::uniform_real_distribution<double>(i.lo, i.hi)(rng); };
  if (kind == SetKind::Shift || kind == SetKind::Combination) {
    t.dx = shift(rng);
    t.dy = shift(rng);
  }
  if (t.rotation_deg) t.rotation_deg = draw(kRotationDeg);
  if (t.scale) t.scale = draw(kScale);
  if (t.luminance) t.luminance = draw(kLuminance);
  if (t.deform_width) t.deform_width = draw(kDeformWidth);
}

// Single-transformation kinds force their transform and disable the rest
// (including the shift); raw is the identity. Presence is decided before
// any value is drawn.
template <typename Rng>
TransformSpec sample_transform(SetKind kind, Rng& rng) {
  TransformSpec t;
  std::bernoulli_distribution coin(0.5);
  switch (kind) {
    case SetKind::Raw:
    case SetKind::Shift: break;
    case SetKind::Rotation: t.rotation_deg = 0.0; break;
    case SetKind::Scale: t.scale = 1.0; break;
    case SetKind::Luminance: t.luminance = 0.0; break;
    case SetKind::Deformation: t.deform_width = 1.0; break;
    case SetKind::Combination:
      if (coin(rng)) t.rotation_deg = 0.0;
      if (coin(rng)) t.scale = 1.0;
      if (coin(rng)) t.luminance = 0.0;
      if (coin(rng)) t.deform_width = 1.0;
      break;
  }
  redraw_values(t, kind, rng);
  return t;
}

// Area multiplier of the geometric part, ignoring clipping.
inline double area_factor(const TransformSpec& t) {
  const double s = t.scale.value_or(1.0);
  return s * s * t.deform_width.value_or(1.0);
}

struct TransformedRegion {
  Image pixels;  // meaningful only where mask is set
  Mask mask;
};

namespace detail {

inline std::uint8_t bilinear(const Image& img, double x, double y, std::size_t c) {
  x = std::clamp(x, 0.0, double(img.width - 1));
  y = std::clamp(y, 0.0, double(img.height - 1));
  const auto x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  if (fx == 0 && fy == 0) return img.at(x0, y0, c);
  const double top = img.at(x0, y0, c) * (1 - fx) + img.at(x1, y0, c) * fx;
  const double bottom = img.at(x0, y1, c) * (1 - fx) + img.at(x1, y1, c) * fx;
  return clamp_byte(top * (1 - fy) + bottom * fy);
}

}  // namespace detail

// Returns nullopt when nothing of the region lands on the canvas.
inline std::optional<TransformedRegion> apply_transform(const Image& source, const Mask& region,
                                                        const TransformSpec& t) {
  if (source.width != region.width || source.height != region.height) {
    throw DimensionError("apply_transform: image and region extents differ");
  }
  const std::size_t W = source.width, H = source.height;
  double cx = 0, cy = 0;
  std::size_t n = 0, x0 = W, y0 = H, x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (region.at(x, y)) {
        cx += x;
        cy += y;
        ++n;
        x0 = std::min(x0, x), x1 = std::max(x1, x);
        y0 = std::min(y0, y), y1 = std::max(y1, y);
      }
    }
  }
  if (n == 0) throw ValidationError("apply_transform: empty region");
  cx /= n;
  cy /= n;

  // Inverse of rotate * deform * scale.
  const bool linear = t.rotation_deg || t.scale || t.deform_width;
  const double theta = t.rotation_deg.value_or(0.0) * std::numbers::pi / 180;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double s = t.scale.value_or(1.0), dw = t.deform_width.value_or(1.0);
  const double lum = t.luminance.value_or(0.0);

  // Output pixels can only come from the forward image of the region's
  // bounding box (half a pixel wider for rounding); scan that, plus margin.
  double bx0 = W, by0 = H, bx1 = -1, by1 = -1;
  for (double qx : {x0 - 0.5, x1 + 0.5}) {
    for (double qy : {y0 - 0.5, y1 + 0.5}) {
      double ux = (qx - cx) * s * dw, uy = (qy - cy) * s;
      double fx = cx + ct * ux - st * uy + t.dx, fy = cy + st * ux + ct * uy + t.dy;
      if (!linear) fx = qx + t.dx, fy = qy + t.dy;
      bx0 = std::min(bx0, fx), bx1 = std::max(bx1, fx);
      by0 = std::min(by0, fy), by1 = std::max(by1, fy);
    }
  }
  auto clip = [](double v, std::size_t hi) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(hi)));
  };
  const std::size_t sx0 = clip(std::floor(bx0) - 2, W), sx1 = clip(std::ceil(bx1) + 3, W);
  const std::size_t sy0 = clip(std::floor(by0) - 2, H), sy1 = clip(std::ceil(by1) + 3, H);

  TransformedRegion out{Image(W, H), Mask(W, H)};
  bool any = false;
  for (std::size_t y = sy0; y < sy1; ++y) {
    for (std::size_t x = sx0; x < sx1; ++x) {
      double px = static_cast<double>(x) - t.dx, py = static_cast<double>(y) - t.dy;
      if (linear) {
        const double ux = px - cx, uy = py - cy;
        const double rx = ct * ux + st * uy, ry = -st * ux + ct * uy;  // rotate back
        px = cx + rx / (s * dw);
        py = cy + ry / s;
      }
      const double nx = std::round(px), ny = std::round(py);
      if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
      if (!region.at(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny))) continue;
      out.mask.at(x, y) = 1;
      any = true;
      for (std::size_t c = 0; c < 3; ++c) {
        const std::uint8_t v = detail::bilinear(source, px, py, c);
        out.pixels.at(x, y, c) = t.luminance ? detail::clamp_byte(v + lum) : v;
      }
    }
  }
  if (!any) return std::nullopt;
  return out;
}

}  // namespace dmac::data
