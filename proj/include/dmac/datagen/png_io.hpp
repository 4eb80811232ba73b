#pragma once

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dmac/datagen/image.hpp"

namespace dmac::data {

namespace detail {

inline std::vector<std::uint8_t> encode_png(const std::uint8_t* pixels, std::size_t w, std::size_t h,
                                            std::uint32_t format) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write '" + path.string() + "'");
}

inline std::vector<std::uint8_t> decode_png(const std::filesystem::path& path, std::uint32_t format,
                                            std::size_t& w, std::size_t& h) {
  const auto bytes = read_file(path);
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError("'" + path.string() + "': " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("'" + path.string() + "': " + img.message);
  }
  w = img.width;
  h = img.height;
  return px;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  return detail::encode_png(img.rgb.data(), img.width, img.height, PNG_FORMAT_RGB);
}

// Masks are stored as 8-bit gray, 0 or 255.
inline std::vector<std::uint8_t> encode_png(const Mask& m) {
  std::vector<std::uint8_t> gray(m.bits.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = m.bits[i] ? 255 : 0;
  return detail::encode_png(gray.data(), m.width, m.height, PNG_FORMAT_GRAY);
}

inline std::vector<std::uint8_t> encode_gray_png(const std::vector<std::uint8_t>& gray, std::size_t w,
                                                 std::size_t h) {
  return detail::encode_png(gray.data(), w, h, PNG_FORMAT_GRAY);
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  detail::write_file(path, encode_png(img));
}

inline void write_png(const std::filesystem::path& path, const Mask& m) {
  detail::write_file(path, encode_png(m));
}

// Any PNG is converted to 8-bit RGB.
inline Image read_png_rgb(const std::filesystem::path& path) {
  Image img;
  img.rgb = detail::decode_png(path, PNG_FORMAT_RGB, img.width, img.height);
  return img;
}

// Gray levels above 127 count as set.
inline Mask read_png_mask(const std::filesystem::path& path) {
  Mask m;
  m.bits = detail::decode_png(path, PNG_FORMAT_GRAY, m.width, m.height);
  for (auto& b : m.bits) b = b > 127 ? 1 : 0;
  return m;
}

}  // namespace dmac::data
