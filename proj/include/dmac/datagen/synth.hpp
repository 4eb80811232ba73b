#pragma once

// Synthetic source images: smooth layered-noise backgrounds carrying a few
// textured, non-overlapping blobs that serve as the annotated regions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "dmac/datagen/image.hpp"

namespace dmac::data {

inline constexpr std::size_t kCanvas = 256;
inline constexpr double kMinRegionFraction = 0.01;
inline constexpr double kMaxRegionFraction = 0.5;

struct SourceImage {
  Image pixels;
  std::vector<Mask> regions;
};

// Seed derivation for independent per-slot streams.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace detail {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Sum of octaves of bilinearly interpolated lattice noise in [-1, 1].
class LayeredNoise {
 public:
  LayeredNoise(Rng& rng, std::size_t octaves, std::size_t base_cells) {
    std::size_t cells = base_cells;
    double amp = 1.0;
    for (std::size_t o = 0; o < octaves; ++o, cells *= 2, amp *= 0.5) {
      Layer l{cells, amp, std::vector<double>((cells + 1) * (cells + 1))};
      for (double& v : l.lattice) v = uniform(rng, -1, 1);
      layers_.push_back(std::move(l));
      norm_ += amp;
    }
  }

  double operator()(double u, double v) const {
    double s = 0;
    for (const auto& l : layers_) {
      const double x = u * l.cells, y = v * l.cells;
      const auto ix = std::min(static_cast<std::size_t>(x), l.cells - 1);
      const auto iy = std::min(static_cast<std::size_t>(y), l.cells - 1);
      const double fx = smooth(x - ix), fy = smooth(y - iy);
      const std::size_t w = l.cells + 1;
      const double a = l.lattice[iy * w + ix], b = l.lattice[iy * w + ix + 1];
      const double c = l.lattice[(iy + 1) * w + ix], d = l.lattice[(iy + 1) * w + ix + 1];
      s += l.amp * ((a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy);
    }
    return s / norm_;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  struct Layer {
    std::size_t cells;
    double amp;
    std::vector<double> lattice;
  };
  std::vector<Layer> layers_;
  double norm_ = 0;
};

struct Box {
  std::size_t x0, y0, x1, y1;  // half-open
};

inline Box box_around(double cx, double cy, double reach, std::size_t size) {
  auto lo = [&](double c) { return static_cast<std::size_t>(std::clamp(std::floor(c - reach), 0.0, double(size))); };
  auto hi = [&](double c) { return static_cast<std::size_t>(std::clamp(std::ceil(c + reach) + 1, 0.0, double(size))); };
  return {lo(cx), lo(cy), hi(cx), hi(cy)};
}

// Star-shaped polygon or rotated ellipse around (cx, cy) with mean radius r.
inline Mask draw_blob(Rng& rng, double cx, double cy, double r, std::size_t size, Box& box) {
  Mask m(size, size);
  if (std::bernoulli_distribution(0.5)(rng)) {
    const double ratio = uniform(rng, 0.5, 1.0), angle = uniform(rng, 0, std::numbers::pi);
    const double a = r / std::sqrt(ratio), b = r * std::sqrt(ratio);
    const double ca = std::cos(angle), sa = std::sin(angle);
    box = box_around(cx, cy, a, size);
    for (std::size_t y = box.y0; y < box.y1; ++y) {
      for (std::size_t x = box.x0; x < box.x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * ca + dy * sa) / a, v = (-dx * sa + dy * ca) / b;
        if (u * u + v * v <= 1) m.at(x, y) = 1;
      }
    }
    return m;
  }
  const int n = std::uniform_int_distribution<int>(5, 9)(rng);
  std::vector<double> radius(n);
  for (double& q : radius) q = r * uniform(rng, 0.75, 1.2);
  const double phase = uniform(rng, 0, 2 * std::numbers::pi);
  box = box_around(cx, cy, 1.2 * r, size);
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      double t = std::atan2(dy, dx) - phase;
      t = std::fmod(t + 4 * std::numbers::pi, 2 * std::numbers::pi) * n / (2 * std::numbers::pi);
      const int k = static_cast<int>(t) % n;
      const double f = t - std::floor(t);
      const double bound = radius[k] * (1 - f) + radius[(k + 1) % n] * f;
      if (dx * dx + dy * dy <= bound * bound) m.at(x, y) = 1;
    }
  }
  return m;
}

// Base color modulated by stripes, checks or fine noise.
inline void paint_texture(Rng& rng, Image& img, const Mask& region, const Box& box) {
  std::array<double, 3> base{};
  for (double& b : base) b = uniform(rng, 30, 225);
  const int pattern = std::uniform_int_distribution<int>(0, 2)(rng);
  const double period = uniform(rng, 4, 14), angle = uniform(rng, 0, std::numbers::pi);
  const double amp = uniform(rng, 20, 45);
  const double ca = std::cos(angle), sa = std::sin(angle);
  LayeredNoise grain(rng, 2, 16);
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) {
      if (!region.at(x, y)) continue;
      const double u = x * ca + y * sa, v = -x * sa + y * ca;
      double p = 0;
      if (pattern == 0) p = std::sin(2 * std::numbers::pi * u / period);
      if (pattern == 1) p = (static_cast<long>(std::floor(u / period) + std::floor(v / period)) & 1) ? 1 : -1;
      if (pattern == 2) p = grain(double(x) / img.width, double(y) / img.height) * 2;
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = clamp_byte(base[c] + amp * p * (c == 1 ? 0.8 : 1.0));
    }
  }
}

inline bool overlaps(const Mask& a, const Mask& b, const Box& box) {
  for (std::size_t y = box.y0; y < box.y1; ++y) {
    for (std::size_t x = box.x0; x < box.x1; ++x) {
      if (a.at(x, y) && b.at(x, y)) return true;
    }
  }
  return false;
}

}  // namespace detail

// Deterministic in `seed`. Regions never overlap, and each covers between 1%
// and 50% of the canvas.
inline SourceImage synth_base_image(std::uint64_t seed, std::size_t size = kCanvas) {
  detail::Rng rng(seed);
  SourceImage src;
  src.pixels = Image(size, size);
  // A luminance field and a chroma field, mixed per channel.
  std::array<double, 3> base{}, lum{}, chroma{};
  for (double& b : base) b = detail::uniform(rng, 60, 190);
  for (double& l : lum) l = detail::uniform(rng, 25, 50);
  for (double& c : chroma) c = detail::uniform(rng, -30, 30);
  const detail::LayeredNoise shade(rng, 4, 3), hue(rng, 3, 2);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = double(x) / size, v = double(y) / size;
      const double a = shade(u, v), b = hue(u, v);
      for (std::size_t c = 0; c < 3; ++c) {
        src.pixels.at(x, y, c) = detail::clamp_byte(base[c] + lum[c] * a + chroma[c] * b);
      }
    }
  }

  const int wanted = std::uniform_int_distribution<int>(2, 6)(rng);
  const double total = static_cast<double>(size * size);
  double budget = 0.85;
  Mask occupied(size, size);
  for (int k = 0; k < wanted; ++k) {
    const int left = wanted - k;
    const double hi = std::min(0.45, budget - 0.015 * (left - 1));
    if (hi <= 0.015) break;
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double target = std::exp(detail::uniform(rng, std::log(0.015), std::log(hi)));
      const double r = std::sqrt(target * total / std::numbers::pi);
      const double cx = detail::uniform(rng, 0.1, 0.9) * size, cy = detail::uniform(rng, 0.1, 0.9) * size;
      detail::Box box{};
      Mask m = detail::draw_blob(rng, cx, cy, r, size, box);
      const double f = m.fraction();
      if (f <= kMinRegionFraction || f > kMaxRegionFraction || detail::overlaps(m, occupied, box)) continue;
      for (std::size_t i = 0; i < m.bits.size(); ++i) occupied.bits[i] |= m.bits[i];
      detail::paint_texture(rng, src.pixels, m, box);
      src.regions.push_back(std::move(m));
      budget -= f;
      break;
    }
  }
  return src;
}

}  // namespace dmac::data
