#pragma once

// Annotated source images from disk: every PNG with a `<stem>.regions`
// sidecar (schema in docs/annotations.md) becomes a 256 x 256 SourceImage.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dmac/datagen/png_io.hpp"
#include "dmac/datagen/synth.hpp"

namespace dmac::data {

struct IngestReport {
  std::vector<SourceImage> images;
  std::vector<std::string> names;
  std::vector<std::string> messages;  // warnings, skipped files, dropped regions
};

namespace detail {

struct RegionSpec {
  std::vector<double> polygon;  // x0 y0 x1 y1 ...
  std::vector<std::size_t> runs;
  bool is_polygon = true;
};

struct Sidecar {
  std::size_t width = 0, height = 0;
  std::vector<RegionSpec> regions;
};

inline Sidecar parse_sidecar(std::istream& in) {
  Sidecar sc;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& why) { throw ParseError("line " + std::to_string(n) + ": " + why); };
    if (key == "size") {
      if (!(ls >> sc.width >> sc.height) || sc.width == 0 || sc.height == 0) fail("bad size");
    } else if (key == "polygon") {
      RegionSpec r;
      double v;
      while (ls >> v) r.polygon.push_back(v);
      if (!ls.eof()) fail("non-numeric polygon coordinate");
      if (r.polygon.size() < 6 || r.polygon.size() % 2) fail("polygon needs at least 3 x y vertices");
      sc.regions.push_back(std::move(r));
    } else if (key == "rle") {
      RegionSpec r;
      r.is_polygon = false;
      std::size_t v;
      while (ls >> v) r.runs.push_back(v);
      if (!ls.eof()) fail("non-numeric run length");
      sc.regions.push_back(std::move(r));
    } else {
      fail("unknown record '" + key + "'");
    }
  }
  if (sc.width == 0) throw ParseError("missing size record");
  return sc;
}

// Even-odd test at pixel centers, vertices scaled by (sx, sy).
inline Mask rasterize_polygon(const std::vector<double>& xy, double sx, double sy, std::size_t size) {
  Mask m(size, size);
  const std::size_t n = xy.size() / 2;
  for (std::size_t y = 0; y < size; ++y) {
    const double py = y + 0.5;
    for (std::size_t x = 0; x < size; ++x) {
      const double px = x + 0.5;
      bool inside = false;
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const double xi = xy[2 * i] * sx, yi = xy[2 * i + 1] * sy;
        const double xj = xy[2 * j] * sx, yj = xy[2 * j + 1] * sy;
        if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
      }
      m.at(x, y) = inside ? 1 : 0;
    }
  }
  return m;
}

// Runs alternate 0s and 1s over the row-major W x H grid, starting with 0s.
inline Mask decode_rle(const std::vector<std::size_t>& runs, std::size_t w, std::size_t h) {
  Mask m(w, h);
  std::size_t pos = 0;
  bool on = false;
  for (std::size_t r : runs) {
    if (pos + r > w * h) throw ParseError("run lengths exceed " + std::to_string(w) + "x" + std::to_string(h));
    if (on) std::fill(m.bits.begin() + pos, m.bits.begin() + pos + r, 1);
    pos += r;
    on = !on;
  }
  return m;
}

inline Mask resample_nearest(const Mask& m, std::size_t size) {
  Mask out(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    const auto sy = std::min(m.height - 1, static_cast<std::size_t>((y + 0.5) * m.height / size));
    for (std::size_t x = 0; x < size; ++x) {
      const auto sx = std::min(m.width - 1, static_cast<std::size_t>((x + 0.5) * m.width / size));
      out.at(x, y) = m.at(sx, sy);
    }
  }
  return out;
}

}  // namespace detail

// Bilinear resize with pixel-center alignment.
inline Image resize_bilinear(const Image& img, std::size_t w, std::size_t h) {
  if (img.width == w && img.height == h) return img;
  Image out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * img.height / h - 0.5, 0.0, double(img.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * img.width / w - 0.5, 0.0, double(img.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1 - tx) + img.at(x1, y0, c) * tx;
        const double bot = img.at(x0, y1, c) * (1 - tx) + img.at(x1, y1, c) * tx;
        out.at(x, y, c) = detail::clamp_byte(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

// Files are visited in name order. Unreadable images and unparseable sidecars
// are skipped with a message; so are regions outside (1%, 50%].
inline IngestReport ingest_annotations(const std::filesystem::path& dir, std::size_t size = kCanvas) {
  namespace fs = std::filesystem;
  IngestReport report;
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> pngs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") pngs.push_back(e.path());
  }
  std::sort(pngs.begin(), pngs.end());
  if (pngs.empty()) report.messages.push_back("warning: no PNG images in '" + dir.string() + "'");

  for (const auto& path : pngs) {
    const std::string name = path.filename().string();
    fs::path side = path;
    side.replace_extension(".regions");
    if (!fs::exists(side)) {
      report.messages.push_back(name + ": skipped, no sidecar " + side.filename().string());
      continue;
    }
    try {
      std::ifstream in(side);
      const auto sc = detail::parse_sidecar(in);
      Image raw = read_png_rgb(path);
      if (raw.width != sc.width || raw.height != sc.height) {
        throw ParseError("sidecar size " + std::to_string(sc.width) + "x" + std::to_string(sc.height) +
                         " does not match image " + std::to_string(raw.width) + "x" + std::to_string(raw.height));
      }
      SourceImage src;
      src.pixels = resize_bilinear(raw, size, size);
      for (std::size_t k = 0; k < sc.regions.size(); ++k) {
        const auto& r = sc.regions[k];
        Mask m = r.is_polygon
                     ? detail::rasterize_polygon(r.polygon, double(size) / sc.width, double(size) / sc.height, size)
                     : detail::resample_nearest(detail::decode_rle(r.runs, sc.width, sc.height), size);
        const double f = m.fraction();
        if (f <= kMinRegionFraction) {
          report.messages.push_back(name + ": region " + std::to_string(k) + " dropped, below 1% floor");
        } else if (f > kMaxRegionFraction) {
          report.messages.push_back(name + ": region " + std::to_string(k) + " dropped, above 50% ceiling");
        } else {
          src.regions.push_back(std::move(m));
        }
      }
      if (src.regions.empty()) report.messages.push_back(name + ": no usable region, kept as host only");
      report.images.push_back(std::move(src));
      report.names.push_back(name);
    } catch (const Error& ex) {
      report.messages.push_back(name + ": skipped, " + ex.what());
    }
  }
  return report;
}

}  // namespace dmac::data
