#pragma once

// The matching network: an atrous VGG-style backbone yielding three feature
// levels at 1/8 input resolution, the correlation skip stack, and a shared
// multi-rate (ASPP) mask head applied to both images.

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dmac/autodiff/ops.hpp"
#include "dmac/autodiff/parameters.hpp"
#include "dmac/core/correlation.hpp"
#include "dmac/core/layers.hpp"

namespace dmac::core {

struct DmacConfig {
  std::string preset = "toy";
  std::vector<std::vector<std::size_t>> block_channels;
  std::size_t rate_block5 = 2;
  std::size_t input_size = 64;
  std::vector<std::size_t> aspp_rates{1, 2, 4, 8};
  std::size_t aspp_width = 64;
  std::size_t top_t = kDefaultTopT;
  // Std of the last 1x1 conv of each head branch; small so the initial
  // prediction is close to uniform.
  double head_output_std = 1e-3;

  static DmacConfig paper() {
    DmacConfig c;
    c.preset = "paper";
    c.block_channels = {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    c.input_size = 256;
    return c;
  }

  static DmacConfig toy() {
    DmacConfig c;
    c.preset = "toy";
    c.block_channels = {{8, 8}, {16, 16}, {32, 32, 32}, {64, 64, 64}, {64, 64, 64}};
    c.input_size = 64;
    return c;
  }

  static DmacConfig from_preset(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "toy") return toy();
    throw ParameterError("unknown preset '" + name + "' (expected paper or toy)");
  }

  std::size_t feature_size() const { return input_size / 8; }

  std::size_t correlation_channels() const {
    const std::size_t hw = feature_size() * feature_size();
    return 3 * 2 * (std::min(top_t, hw) + 2);
  }

  void validate() const {
    if (input_size == 0 || input_size % 8 != 0) {
      throw DimensionError("input size " + std::to_string(input_size) + " is not a multiple of 8");
    }
    if (block_channels.size() != 5) throw ParameterError("backbone needs exactly five blocks");
    for (const auto& b : block_channels) {
      if (b.empty()) throw ParameterError("backbone block without convolutions");
    }
    if (rate_block5 < 1) throw ParameterError("block-5 rate must be >= 1");
    if (aspp_rates.empty()) throw ParameterError("mask head needs at least one rate");
    for (std::size_t r : aspp_rates) {
      if (r < 1 || r > feature_size()) {
        throw ParameterError("head rate " + std::to_string(r) + " outside [1, " +
                             std::to_string(feature_size()) + "]");
      }
    }
  }
};

// Per-pixel class probabilities; channel 0 pristine, channel 1 tampered.
template <typename S>
struct MaskPair {
  Tensor<S> y_a, y_b;
};

template <typename S>
class DmacNet {
 public:
  DmacNet(DmacConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = 3;
    for (std::size_t b = 0; b < 5; ++b) {
      ad::Conv2dOptions opt;
      opt.rate = b == 4 ? config_.rate_block5 : 1;
      opt.padding = opt.rate;
      std::vector<Conv2dLayer<S>> block;
      for (std::size_t i = 0; i < config_.block_channels[b].size(); ++i) {
        const std::size_t out = config_.block_channels[b][i];
        block.push_back(Conv2dLayer<S>::make(
            params_, "backbone.block" + std::to_string(b + 1) + ".conv" + std::to_string(i + 1), in,
            out, 3, opt, rng));
        in = out;
      }
      blocks_.push_back(std::move(block));
    }

    const std::size_t cin = config_.correlation_channels();
    const std::size_t width = config_.aspp_width;
    for (std::size_t r : config_.aspp_rates) {
      const std::string name = "head.rate" + std::to_string(r);
      Branch br;
      br.atrous = Conv2dLayer<S>::make(params_, name + ".atrous", cin, width, 3,
                                       {.stride = 1, .padding = r, .rate = r}, rng);
      br.mix = Conv2dLayer<S>::make(params_, name + ".mix", width, width, 1, {}, rng);
      br.bn = BatchNormLayer<S>::make(params_, name + ".bn", width);
      br.out = Conv2dLayer<S>::make(params_, name + ".out", width, 2, 1, {}, rng);
      const auto small = ad::normal_tensor<S>(br.out.weight.shape(), config_.head_output_std, rng);
      std::copy(small.values().begin(), small.values().end(), br.out.weight.data());
      branches_.push_back(br);
    }
    input_mean_ = params_.add_buffer("input.mean", Tensor<S>(Shape{3}, S(0.5)));
  }

  const DmacConfig& config() const { return config_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }

  // Per-channel mean (in [0,1] units) subtracted from every input image.
  Tensor<S> input_mean() const { return input_mean_; }
  void set_input_mean(const std::vector<double>& mean) {
    for (std::size_t c = 0; c < 3; ++c) input_mean_[c] = static_cast<S>(mean.at(c));
  }

  // 8-bit intensities (B x 3 x S x S) to network input: x / 255 - mean_c.
  Tensor<S> normalize(const Tensor<S>& raw) const {
    if (raw.rank() != 4 || raw.dim(1) != 3) {
      throw DimensionError("normalize: expected B x 3 x S x S, got " + ad::to_string(raw.shape()));
    }
    Tensor<S> out(raw.shape());
    const std::size_t plane = raw.dim(2) * raw.dim(3);
    for (std::size_t i = 0; i < raw.numel(); ++i) {
      out[i] = raw[i] / S(255) - input_mean_[(i / plane) % 3];
    }
    return out;
  }

  FeaturePyramid<S> extract_features(const Tensor<S>& image) const {
    if (image.rank() != 4 || image.dim(1) != 3) {
      throw DimensionError("extract_features: expected B x 3 x S x S, got " +
                           ad::to_string(image.shape()));
    }
    if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
      throw DimensionError("extract_features: spatial extent " + ad::to_string(image.shape()) +
                           " not divisible by 8");
    }
    FeaturePyramid<S> pyr;
    Tensor<S> x = image;
    for (std::size_t b = 0; b < 5; ++b) {
      for (const auto& conv : blocks_[b]) x = ad::relu(conv(x));
      if (b < 3) x = ad::maxpool2d(x, 2, 2);
      if (b == 2) pyr.f3 = x;
      if (b == 3) pyr.f4 = x;
      if (b == 4) pyr.f5 = x;
    }
    return pyr;
  }

  // Two-channel logits, branch outputs summed.
  Tensor<S> aspp_head(const Tensor<S>& c, Mode mode) const {
    if (c.rank() != 4 || c.dim(1) != config_.correlation_channels()) {
      throw DimensionError("aspp_head: expected B x " +
                           std::to_string(config_.correlation_channels()) + " x h x w, got " +
                           ad::to_string(c.shape()));
    }
    Tensor<S> logits;
    for (const auto& br : branches_) {
      if (br.atrous.opt.rate > c.dim(2) || br.atrous.opt.rate > c.dim(3)) {
        throw ParameterError("aspp_head: rate " + std::to_string(br.atrous.opt.rate) +
                             " exceeds feature extent " + ad::to_string(c.shape()));
      }
      Tensor<S> y = br.out(ad::relu(br.bn(br.mix(br.atrous(c)), mode)));
      logits = logits.defined() ? ad::add(logits, y) : y;
    }
    return logits;
  }

  // Both images go through the same backbone; the head sees [c_a; c_b] as one
  // batch so its normalization statistics cover both.
  MaskPair<S> forward(const Tensor<S>& img_a, const Tensor<S>& img_b, Mode mode) const {
    if (img_a.shape() != img_b.shape()) {
      throw DimensionError("forward: image shapes differ " + ad::to_string(img_a.shape()) +
                           " vs " + ad::to_string(img_b.shape()));
    }
    const std::size_t B = img_a.dim(0);
    auto stack = correlate_skip(extract_features(img_a), extract_features(img_b), config_.top_t);
    auto probs = ad::softmax_channels(aspp_head(ad::concat_batch<S>({stack.c_a, stack.c_b}), mode));
    return {ad::slice_batch(probs, 0, B), ad::slice_batch(probs, B, B)};
  }

 private:
  struct Branch {
    Conv2dLayer<S> atrous, mix;
    BatchNormLayer<S> bn;
    Conv2dLayer<S> out;
  };

  DmacConfig config_;
  ParameterSet<S> params_;
  std::vector<std::vector<Conv2dLayer<S>>> blocks_;
  std::vector<Branch> branches_;
  Tensor<S> input_mean_;
};

// Bilinear resize of a B x 2 x h x w mask to size x size. Inference only.
template <typename S>
Tensor<S> upsample_mask(const Tensor<S>& mask, std::size_t size) {
  return ad::bilinear_upsample(mask, size, size);
}

}  // namespace dmac::core
