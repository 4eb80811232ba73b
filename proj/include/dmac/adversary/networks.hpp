#pragma once

// Auxiliary networks that look at masked images (a tampered-probability map
// multiplied into an average-pooled copy of the input):
//   DetNet - Siamese verifier, is the pair correlated?
//   DisNet - spectrally normalized critic, is the mask a ground truth?

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "dmac/autodiff/ops.hpp"
#include "dmac/autodiff/parameters.hpp"
#include "dmac/autodiff/spectral.hpp"
#include "dmac/core/layers.hpp"

namespace dmac::adversary {

using ad::Mode;
using ad::ParameterSet;
using ad::Shape;
using ad::Tensor;

enum class LossVariant { Bce, Hinge };

inline std::string to_string(LossVariant v) { return v == LossVariant::Bce ? "bce" : "hinge"; }

inline LossVariant parse_variant(const std::string& s) {
  if (s == "bce") return LossVariant::Bce;
  if (s == "hinge") return LossVariant::Hinge;
  throw ParameterError("unknown loss variant '" + s + "' (expected bce or hinge)");
}

// Block means over factor x factor windows; the factor is image size / mask
// size, 8 for both presets.
template <typename S>
Tensor<S> pool_image(const Tensor<S>& image, std::size_t factor = 8) {
  if (image.rank() != 4 || image.dim(2) % factor != 0 || image.dim(3) % factor != 0) {
    throw DimensionError("pool_image: extent " + ad::to_string(image.shape()) +
                         " not divisible by " + std::to_string(factor));
  }
  return ad::avgpool2d(image, factor, factor);
}

// out[b,c,i,j] = mask[b,t,i,j] * pooled[b,c,i,j] where t is the tampered
// channel (1 for a two-channel soft mask, 0 for a single-channel one).
template <typename S>
Tensor<S> mask_image(const Tensor<S>& mask, const Tensor<S>& pooled) {
  if (mask.rank() != 4 || (mask.dim(1) != 1 && mask.dim(1) != 2)) {
    throw DimensionError("mask_image: expected B x 1 or B x 2 mask, got " +
                         ad::to_string(mask.shape()));
  }
  for (S v : mask.values()) {
    if (!(v >= S(0) && v <= S(1))) throw ValidationError("mask_image: mask value outside [0,1]");
  }
  const Tensor<S> tampered = mask.dim(1) == 2 ? ad::select_channel(mask, 1) : mask;
  return ad::broadcast_mask_mul(tampered, pooled);
}

template <typename S>
class DetNet {
 public:
  // `input_size` is the masked-image extent (the mask resolution).
  DetNet(std::size_t input_size, std::uint64_t seed) : input_size_(input_size) {
    if (input_size % 4 != 0 || input_size == 0) {
      throw DimensionError("DetNet: input size must be a positive multiple of 4");
    }
    std::mt19937_64 rng(seed);
    const ad::Conv2dOptions same{.stride = 1, .padding = 1, .rate = 1};
    const std::size_t widths[] = {3, 16, 32, 32, 64};
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string name = "det.conv" + std::to_string(i + 1);
      convs_[i] = core::Conv2dLayer<S>::make(params_, name, widths[i], widths[i + 1], 3, same, rng);
      bns_[i] = core::BatchNormLayer<S>::make(params_, name + ".bn", widths[i + 1]);
    }
    const std::size_t q = input_size / 4;
    fc1_ = core::LinearLayer<S>::make(params_, "det.fc1", 64 * q * q, 256, rng);
    fc2_ = core::LinearLayer<S>::make(params_, "det.fc2", 256, 2, rng);
  }

  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }
  std::size_t input_size() const { return input_size_; }

  // B x 2 class probabilities; index 0 correlated, index 1 uncorrelated. The
  // two inputs share one batch through the feature stack.
  Tensor<S> forward(const Tensor<S>& masked_a, const Tensor<S>& masked_b, Mode mode) const {
    for (const Tensor<S>* t : {&masked_a, &masked_b}) {
      if (t->rank() != 4 || t->dim(1) != 3 || t->dim(2) != input_size_ || t->dim(3) != input_size_) {
        throw DimensionError("DetNet: expected B x 3 x " + std::to_string(input_size_) + " x " +
                             std::to_string(input_size_) + ", got " + ad::to_string(t->shape()));
      }
    }
    if (masked_a.dim(0) != masked_b.dim(0)) throw DimensionError("DetNet: batch sizes differ");
    const std::size_t B = masked_a.dim(0);
    Tensor<S> x = ad::concat_batch<S>({masked_a, masked_b});
    x = ad::relu(bns_[0](convs_[0](x), mode));
    x = ad::maxpool2d(x, 2, 2);
    x = ad::relu(bns_[1](convs_[1](x), mode));
    x = ad::relu(bns_[2](convs_[2](x), mode));
    x = ad::maxpool2d(x, 2, 2);
    x = ad::relu(bns_[3](convs_[3](x), mode));
    x = ad::flatten(x);
    Tensor<S> diff = ad::abs_diff(ad::slice_batch(x, 0, B), ad::slice_batch(x, B, B));
    return ad::softmax_channels(fc2_(ad::relu(fc1_(diff))));
  }

 private:
  std::size_t input_size_;
  ParameterSet<S> params_;
  core::Conv2dLayer<S> convs_[4];
  core::BatchNormLayer<S> bns_[4];
  core::LinearLayer<S> fc1_, fc2_;
};

template <typename S>
class DisNet {
 public:
  DisNet(std::size_t input_size, LossVariant variant, std::uint64_t seed)
      : input_size_(input_size), variant_(variant) {
    if (input_size % 4 != 0 || input_size == 0) {
      throw DimensionError("DisNet: input size must be a positive multiple of 4");
    }
    std::mt19937_64 rng(seed);
    const ad::Conv2dOptions same{.stride = 1, .padding = 1, .rate = 1};
    const std::size_t widths[] = {3, 16, 32, 32, 64};
    for (std::size_t i = 0; i < 4; ++i) {
      convs_[i] = core::SpectralConv2dLayer<S>::make(params_, "dis.conv" + std::to_string(i + 1),
                                                     widths[i], widths[i + 1], 3, same, rng);
    }
    const std::size_t q = input_size / 4;
    fc_ = core::SpectralLinearLayer<S>::make(params_, "dis.fc", 64 * q * q, 1, rng);
  }

  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }
  LossVariant variant() const { return variant_; }

  // B x 1 scores: probabilities for the BCE variant, raw for hinge.
  Tensor<S> forward(const Tensor<S>& masked) {
    if (masked.rank() != 4 || masked.dim(1) != 3 || masked.dim(2) != input_size_ ||
        masked.dim(3) != input_size_) {
      throw DimensionError("DisNet: expected B x 3 x " + std::to_string(input_size_) + " x " +
                           std::to_string(input_size_) + ", got " + ad::to_string(masked.shape()));
    }
    Tensor<S> x = ad::leaky_relu(convs_[0](masked));
    x = ad::maxpool2d(x, 2, 2);
    x = ad::leaky_relu(convs_[1](x));
    x = ad::leaky_relu(convs_[2](x));
    x = ad::maxpool2d(x, 2, 2);
    x = ad::leaky_relu(convs_[3](x));
    Tensor<S> score = fc_(ad::flatten(x));
    return variant_ == LossVariant::Bce ? ad::sigmoid(score) : score;
  }

  // Largest ratio of a weight's true top singular value to the estimate it
  // was last divided by, i.e. the spectral norm of the normalized weights.
  double max_normalized_sigma() const {
    double worst = 0;
    auto check = [&](const Tensor<S>& w, const ad::SpectralState<S>& st) {
      const double sigma = st.sigma > S(0) ? static_cast<double>(st.sigma) : 1.0;
      worst = std::max(worst, ad::top_singular_value(w) / sigma);
    };
    for (const auto& c : convs_) check(c.conv.weight, c.state);
    check(fc_.fc.weight, fc_.state);
    return worst;
  }

  // Pins every normalizer to its current estimate (finite-difference checks).
  void freeze_spectral(bool on) {
    for (auto& c : convs_) c.state.frozen = on;
    fc_.state.frozen = on;
  }

 private:
  std::size_t input_size_;
  LossVariant variant_;
  ParameterSet<S> params_;
  core::SpectralConv2dLayer<S> convs_[4];
  core::SpectralLinearLayer<S> fc_;
};

}  // namespace dmac::adversary
