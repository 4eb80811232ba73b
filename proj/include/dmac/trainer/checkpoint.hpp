#pragma once

// Checkpoint container.
//
//   DMACCKPT <version>
//   meta <one-line JSON>
//   arrays <count>
//   <name> <f32|f64> <d0>x<d1>... <offset> <bytes>     one line per array
//   end
//   <little-endian array data, offsets relative to the byte after "end\n">

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "dmac/autodiff/tensor.hpp"

namespace dmac::train {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "DMACCKPT";

struct ArrayRecord {
  std::string name;
  std::string dtype;  // f32 or f64
  ad::Shape shape;
  std::vector<unsigned char> bytes;  // little-endian

  std::size_t numel() const { return ad::element_count(shape); }

  template <typename S>
  static ArrayRecord from(std::string name, ad::Shape shape, std::span<const S> values) {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
    ArrayRecord r{std::move(name), sizeof(S) == 4 ? "f32" : "f64", std::move(shape), {}};
    r.bytes.resize(values.size() * sizeof(S));
    std::memcpy(r.bytes.data(), values.data(), r.bytes.size());
    if constexpr (std::endian::native == std::endian::big) r.swap_bytes();
    return r;
  }

  // Values converted to S; a same-width read is bit-exact.
  template <typename S>
  std::vector<S> values() const {
    std::vector<S> out(numel());
    auto copy = [&](auto tag) {
      using T = decltype(tag);
      ArrayRecord tmp = *this;
      if constexpr (std::endian::native == std::endian::big) tmp.swap_bytes();
      for (std::size_t i = 0; i < out.size(); ++i) {
        T v;
        std::memcpy(&v, tmp.bytes.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<S>(v);
      }
    };
    if (dtype == "f32") copy(float{});
    else copy(double{});
    return out;
  }

  std::size_t width() const { return dtype == "f32" ? 4 : 8; }

 private:
  void swap_bytes() {
    const std::size_t w = width();
    for (std::size_t i = 0; i + w <= bytes.size(); i += w) std::reverse(bytes.begin() + i, bytes.begin() + i + w);
  }
};

struct CheckpointData {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArrayRecord> arrays;

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& a : arrays) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

namespace detail {

inline std::string shape_text(const ad::Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline ad::Shape parse_shape(const std::string& text) {
  ad::Shape s;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw ParseError("checkpoint: bad shape '" + text + "'");
    }
    s.push_back(std::stoull(part));
  }
  if (s.empty()) throw ParseError("checkpoint: empty shape");
  return s;
}

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointData& c) {
  std::ostringstream head;
  head << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  head << "meta " << c.meta.dump() << '\n';
  head << "arrays " << c.arrays.size() << '\n';
  std::size_t offset = 0;
  for (const auto& a : c.arrays) {
    if (a.name.empty() || a.name.find_first_of(" \t\n") != std::string::npos) {
      throw ParameterError("checkpoint: array name '" + a.name + "' contains whitespace");
    }
    head << a.name << ' ' << a.dtype << ' ' << detail::shape_text(a.shape) << ' ' << offset << ' '
         << a.bytes.size() << '\n';
    offset += a.bytes.size();
  }
  head << "end\n";
  std::string out = head.str();
  out.reserve(out.size() + offset);
  for (const auto& a : c.arrays) out.append(a.bytes.begin(), a.bytes.end());
  return out;
}

inline CheckpointData decode_checkpoint(const std::string& buf) {
  std::size_t pos = 0;
  auto line = [&]() -> std::string {
    const std::size_t nl = buf.find('\n', pos);
    if (nl == std::string::npos) throw TruncatedError("checkpoint: header ends early");
    std::string l = buf.substr(pos, nl - pos);
    pos = nl + 1;
    return l;
  };

  std::istringstream first(line());
  std::string magic;
  int version = 0;
  first >> magic;
  if (magic != kCheckpointMagic) throw ParseError("checkpoint: bad magic, not a checkpoint file");
  if (!(first >> version)) throw ParseError("checkpoint: missing version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: format version " + std::to_string(version) + ", this build reads " +
                       std::to_string(kCheckpointVersion));
  }

  CheckpointData c;
  const std::string meta = line();
  if (meta.rfind("meta ", 0) != 0) throw ParseError("checkpoint: missing meta record");
  try {
    c.meta = nlohmann::json::parse(meta.substr(5));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: meta is not JSON: ") + e.what());
  }

  std::istringstream count_line(line());
  std::string key;
  std::size_t count = 0;
  if (!(count_line >> key >> count) || key != "arrays") throw ParseError("checkpoint: missing array count");

  struct Entry {
    ArrayRecord rec;
    std::size_t offset, size;
  };
  std::vector<Entry> entries;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(line());
    Entry e;
    std::string shape;
    if (!(ls >> e.rec.name >> e.rec.dtype >> shape >> e.offset >> e.size)) {
      throw ParseError("checkpoint: malformed array record " + std::to_string(i));
    }
    if (e.rec.dtype != "f32" && e.rec.dtype != "f64") {
      throw ParseError("checkpoint: unknown dtype '" + e.rec.dtype + "'");
    }
    e.rec.shape = detail::parse_shape(shape);
    if (e.size != e.rec.numel() * e.rec.width()) {
      throw ParseError("checkpoint: byte count of '" + e.rec.name + "' does not match its shape");
    }
    entries.push_back(std::move(e));
  }
  if (line() != "end") throw ParseError("checkpoint: missing end of header");

  const std::size_t blob = buf.size() - pos;
  for (auto& e : entries) {
    if (e.offset + e.size > blob) {
      throw TruncatedError("checkpoint: data for '" + e.rec.name + "' runs past end of file");
    }
    e.rec.bytes.assign(buf.begin() + pos + e.offset, buf.begin() + pos + e.offset + e.size);
    c.arrays.push_back(std::move(e.rec));
  }
  return c;
}

inline void save_checkpoint(const CheckpointData& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace dmac::train
