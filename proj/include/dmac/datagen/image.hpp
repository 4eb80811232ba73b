#pragma once

// 8-bit raster types shared by the generator, the PNG codec and the trainer.
// Color images are interleaved RGB, row-major.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dmac/error.hpp"

namespace dmac::data {

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

// Binary mask, one byte per pixel holding 0 or 1.
struct Mask {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), bits(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return bits[y * width + x]; }

  std::size_t area() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  double fraction() const { return bits.empty() ? 0.0 : static_cast<double>(area()) / bits.size(); }
  bool operator==(const Mask&) const = default;
};

inline Mask complement(const Mask& m) {
  Mask out(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) out.bits[i] = m.bits[i] ? 0 : 1;
  return out;
}

// Mean over factor x factor blocks, rounded to nearest.
inline Image box_downsample(const Image& img, std::size_t factor) {
  if (factor == 0 || img.width % factor || img.height % factor) {
    throw DimensionError("box_downsample: " + std::to_string(img.width) + "x" +
                         std::to_string(img.height) + " not divisible by " + std::to_string(factor));
  }
  Image out(img.width / factor, img.height / factor);
  const std::size_t n = factor * factor;
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::size_t s = 0;
        for (std::size_t dy = 0; dy < factor; ++dy) {
          for (std::size_t dx = 0; dx < factor; ++dx) s += img.at(x * factor + dx, y * factor + dy, c);
        }
        out.at(x, y, c) = static_cast<std::uint8_t>((s + n / 2) / n);
      }
    }
  }
  return out;
}

// A cell is set when at least half of its factor x factor block is set.
inline Mask pool_mask(const Mask& m, std::size_t factor) {
  if (factor == 0 || m.width % factor || m.height % factor) {
    throw DimensionError("pool_mask: " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                         " not divisible by " + std::to_string(factor));
  }
  Mask out(m.width / factor, m.height / factor);
  for (std::size_t y = 0; y < out.height; ++y) {
    for (std::size_t x = 0; x < out.width; ++x) {
      std::size_t s = 0;
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) s += m.at(x * factor + dx, y * factor + dy);
      }
      out.at(x, y) = 2 * s >= factor * factor ? 1 : 0;
    }
  }
  return out;
}

}  // namespace dmac::data
