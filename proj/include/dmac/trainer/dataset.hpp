#pragma once

// Training samples at network resolution: images box-downsampled to the
// preset's input size, masks pooled to its 1/8 output grid. Pixel values
// stay in 0..255 and are normalized by the model.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmac/adversary/losses.hpp"
#include "dmac/core/dmac_net.hpp"
#include "dmac/datagen/generate.hpp"

namespace dmac::train {

struct PairSample {
  std::string id;
  data::PairKind kind = data::PairKind::Foreground;
  bool correlated = true;
  std::vector<float> image_a, image_b;  // 3 x S x S planar
  std::vector<std::uint8_t> label_a, label_b;  // s x s, 1 = tampered
};

struct Dataset {
  std::size_t input_size = 0, mask_size = 0;
  std::vector<PairSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

namespace detail {

inline std::vector<float> planar(const data::Image& img) {
  const std::size_t n = img.width * img.height;
  std::vector<float> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * n + i] = img.rgb[i * 3 + c];
  }
  return out;
}

inline std::size_t exact_factor(std::size_t from, std::size_t to, const char* what) {
  if (to == 0 || from % to != 0) {
    throw DimensionError(std::string(what) + ": " + std::to_string(from) + " is not a multiple of " +
                         std::to_string(to));
  }
  return from / to;
}

}  // namespace detail

inline PairSample make_sample(const data::SplicePair& p, std::size_t input_size, std::size_t mask_size,
                              std::string id = {}) {
  PairSample s;
  s.id = std::move(id);
  s.kind = p.kind;
  s.correlated = p.correlated;
  const std::size_t fi = detail::exact_factor(p.probe.width, input_size, "image resolution");
  const std::size_t fm = detail::exact_factor(p.mask_p.width, mask_size, "mask resolution");
  s.image_a = detail::planar(data::box_downsample(p.probe, fi));
  s.image_b = detail::planar(data::box_downsample(p.donor, fi));
  s.label_a = data::pool_mask(p.mask_p, fm).bits;
  s.label_b = data::pool_mask(p.mask_d, fm).bits;
  return s;
}

inline Dataset empty_dataset(const core::DmacConfig& cfg) {
  return Dataset{cfg.input_size, cfg.feature_size(), {}};
}

inline Dataset load_dataset(const std::filesystem::path& dir, const core::DmacConfig& cfg) {
  Dataset d = empty_dataset(cfg);
  for (const auto& e : data::read_manifest(dir)) {
    d.samples.push_back(make_sample(data::load_pair(dir, e), d.input_size, d.mask_size, e.id));
  }
  return d;
}

// In-memory generation; ids follow the manifest convention.
inline Dataset generate_dataset(const data::SetOptions& opt, const core::DmacConfig& cfg) {
  Dataset d = empty_dataset(cfg);
  data::generate_triplets(opt, [&](const data::TripletInfo& info, const data::Triplet& t) {
    for (const data::SplicePair* p : {&t.foreground, &t.background, &t.negative}) {
      d.samples.push_back(make_sample(*p, d.input_size, d.mask_size, info.id + "-" + to_string(p->kind)));
    }
  });
  return d;
}

// Per-channel mean of every image in the set, in [0,1] units.
inline std::vector<double> channel_mean(const Dataset& d) {
  if (d.empty()) throw ParameterError("channel_mean: empty dataset");
  std::array<double, 3> sum{};
  const std::size_t plane = d.input_size * d.input_size;
  for (const auto& s : d.samples) {
    for (const auto* img : {&s.image_a, &s.image_b}) {
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) sum[c] += (*img)[c * plane + i];
      }
    }
  }
  const double n = 2.0 * d.size() * plane * 255.0;
  return {sum[0] / n, sum[1] / n, sum[2] / n};
}

// One minibatch as network tensors.
template <typename S>
struct Batch {
  std::vector<std::size_t> indices;
  ad::Tensor<S> raw_a, raw_b;        // B x 3 x S x S, 0..255
  ad::Tensor<S> gt_a, gt_b;          // B x 2 x s x s one-hot
  ad::Tensor<S> det_labels;          // B x 2, index 0 correlated
  std::vector<std::size_t> positive; // batch rows of correlated pairs
};

template <typename S>
Batch<S> assemble(const Dataset& d, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ParameterError("assemble: empty batch");
  const std::size_t B = indices.size(), N = d.input_size, M = d.mask_size;
  Batch<S> b;
  b.indices = indices;
  b.raw_a = ad::Tensor<S>({B, 3, N, N});
  b.raw_b = ad::Tensor<S>({B, 3, N, N});
  ad::Tensor<S> la({B, M, M}), lb({B, M, M});
  b.det_labels = ad::Tensor<S>({B, 2});
  for (std::size_t r = 0; r < B; ++r) {
    const auto& s = d.samples.at(indices[r]);
    if (s.image_a.size() != 3 * N * N || s.label_a.size() != M * M) {
      throw DimensionError("assemble: sample '" + s.id + "' does not match the dataset resolution");
    }
    std::copy(s.image_a.begin(), s.image_a.end(), b.raw_a.data() + r * 3 * N * N);
    std::copy(s.image_b.begin(), s.image_b.end(), b.raw_b.data() + r * 3 * N * N);
    std::copy(s.label_a.begin(), s.label_a.end(), la.data() + r * M * M);
    std::copy(s.label_b.begin(), s.label_b.end(), lb.data() + r * M * M);
    b.det_labels[r * 2 + (s.correlated ? 0 : 1)] = S(1);
    if (s.correlated) b.positive.push_back(r);
  }
  b.gt_a = adversary::one_hot_mask(la);
  b.gt_b = adversary::one_hot_mask(lb);
  return b;
}

}  // namespace dmac::train
