#pragma once

// Parameterized layers that register their tensors in a ParameterSet under a
// dotted name prefix.

#include <cstddef>
#include <string>

#include "dmac/autodiff/ops.hpp"
#include "dmac/autodiff/parameters.hpp"
#include "dmac/autodiff/spectral.hpp"

namespace dmac::core {

using ad::Mode;
using ad::ParameterSet;
using ad::Shape;
using ad::Tensor;

template <typename S>
struct Conv2dLayer {
  Tensor<S> weight, bias;
  ad::Conv2dOptions opt;

  template <typename Rng>
  static Conv2dLayer make(ParameterSet<S>& ps, const std::string& name, std::size_t in,
                          std::size_t out, std::size_t kernel, ad::Conv2dOptions opt, Rng& rng) {
    Conv2dLayer l;
    l.weight = ps.add_parameter(name + ".weight",
                                ad::he_normal<S>({out, in, kernel, kernel}, in * kernel * kernel, rng));
    l.bias = ps.add_parameter(name + ".bias", Tensor<S>(Shape{out}));
    l.opt = opt;
    return l;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return ad::conv2d(x, weight, bias, opt); }
};

template <typename S>
struct BatchNormLayer {
  Tensor<S> gamma, beta, running_mean, running_var;

  static BatchNormLayer make(ParameterSet<S>& ps, const std::string& name, std::size_t channels) {
    BatchNormLayer l;
    l.gamma = ps.add_parameter(name + ".gamma", Tensor<S>(Shape{channels}, S(1)));
    l.beta = ps.add_parameter(name + ".beta", Tensor<S>(Shape{channels}));
    l.running_mean = ps.add_buffer(name + ".running_mean", Tensor<S>(Shape{channels}));
    l.running_var = ps.add_buffer(name + ".running_var", Tensor<S>(Shape{channels}, S(1)));
    return l;
  }

  Tensor<S> operator()(const Tensor<S>& x, Mode mode) const {
    return ad::batchnorm2d(x, gamma, beta, running_mean, running_var, mode);
  }
};

template <typename S>
struct LinearLayer {
  Tensor<S> weight, bias;

  template <typename Rng>
  static LinearLayer make(ParameterSet<S>& ps, const std::string& name, std::size_t in,
                          std::size_t out, Rng& rng) {
    LinearLayer l;
    l.weight = ps.add_parameter(name + ".weight", ad::he_normal<S>({out, in}, in, rng));
    l.bias = ps.add_parameter(name + ".bias", Tensor<S>(Shape{out}));
    return l;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return ad::linear(x, weight, bias); }
};

// Weight divided by its running top-singular-value estimate on every call.
// The power-iteration vector is a buffer so it travels with checkpoints.
template <typename S>
struct SpectralConv2dLayer {
  Conv2dLayer<S> conv;
  ad::SpectralState<S> state;

  template <typename Rng>
  static SpectralConv2dLayer make(ParameterSet<S>& ps, const std::string& name, std::size_t in,
                                  std::size_t out, std::size_t kernel, ad::Conv2dOptions opt,
                                  Rng& rng) {
    SpectralConv2dLayer l;
    l.conv = Conv2dLayer<S>::make(ps, name, in, out, kernel, opt, rng);
    l.state = ad::make_spectral_state(l.conv.weight, rng);
    ps.add_buffer(name + ".u", l.state.u);
    return l;
  }

  Tensor<S> operator()(const Tensor<S>& x) {
    return ad::conv2d(x, ad::spectral_normalize(conv.weight, state), conv.bias, conv.opt);
  }
};

template <typename S>
struct SpectralLinearLayer {
  LinearLayer<S> fc;
  ad::SpectralState<S> state;

  template <typename Rng>
  static SpectralLinearLayer make(ParameterSet<S>& ps, const std::string& name, std::size_t in,
                                  std::size_t out, Rng& rng) {
    SpectralLinearLayer l;
    l.fc = LinearLayer<S>::make(ps, name, in, out, rng);
    l.state = ad::make_spectral_state(l.fc.weight, rng);
    ps.add_buffer(name + ".u", l.state.u);
    return l;
  }

  Tensor<S> operator()(const Tensor<S>& x) {
    return ad::linear(x, ad::spectral_normalize(fc.weight, state), fc.bias);
  }
};

}  // namespace dmac::core
