#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "dmac/autodiff/tensor.hpp"

namespace dmac::ad {

// Persistent power-iteration state for one spectrally normalized weight.
template <typename S>
struct SpectralState {
  Tensor<S> u;  // unit-norm estimate of the top left singular vector
  std::size_t power_iterations = 1;
  // When set, the next call caches sigma and later calls reuse it without
  // touching u. Finite-difference checks need a fixed normalizer.
  bool frozen = false;
  S sigma = S(0);
};

namespace detail {

// Weight viewed as rows = dim(0), cols = everything else.
template <typename S>
struct MatrixShape {
  std::size_t rows, cols;
};

template <typename S>
MatrixShape<S> as_matrix(const Tensor<S>& w) {
  if (!w.defined() || w.rank() < 2) {
    throw DimensionError("spectral_normalize: weight must have rank >= 2");
  }
  return {w.dim(0), w.numel() / w.dim(0)};
}

inline double normalize_in_place(std::vector<double>& v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  const double d = std::max(n, 1e-12);
  for (double& x : v) x /= d;
  return n;
}

// One power-iteration sweep starting from u; returns sigma = ||W v||.
template <typename S>
double power_sweep(const S* w, std::size_t rows, std::size_t cols, std::vector<double>& u,
                   std::vector<double>& v) {
  v.assign(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double ur = u[r];
    const S* row = w + r * cols;
    for (std::size_t c = 0; c < cols; ++c) v[c] += ur * row[c];
  }
  normalize_in_place(v);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = w + r * cols;
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * v[c];
    u[r] = s;
  }
  return normalize_in_place(u);
}

}  // namespace detail

// Random unit u followed by `warmup` power iterations.
template <typename S, typename Rng>
SpectralState<S> make_spectral_state(const Tensor<S>& weight, Rng& rng, std::size_t warmup = 15) {
  const auto m = detail::as_matrix(weight);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> u(m.rows), v;
  for (double& x : u) x = normal(rng);
  detail::normalize_in_place(u);
  double sigma = 0;
  for (std::size_t i = 0; i < warmup; ++i) sigma = detail::power_sweep(weight.data(), m.rows, m.cols, u, v);
  SpectralState<S> state;
  state.sigma = static_cast<S>(sigma);
  state.u = Tensor<S>(Shape{m.rows});
  for (std::size_t r = 0; r < m.rows; ++r) state.u[r] = static_cast<S>(u[r]);
  return state;
}

// Largest singular value by `iterations` power sweeps from a fixed start.
template <typename S>
double top_singular_value(const Tensor<S>& weight, std::size_t iterations = 200) {
  const auto m = detail::as_matrix(weight);
  std::vector<double> u(m.rows), v;
  std::mt19937_64 rng(0x5eedULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : u) x = normal(rng);
  detail::normalize_in_place(u);
  double sigma = 0;
  for (std::size_t i = 0; i < iterations; ++i) {
    sigma = detail::power_sweep(weight.data(), m.rows, m.cols, u, v);
  }
  return sigma;
}

// weight / sigma_hat, where sigma_hat comes from `state.power_iterations`
// sweeps continuing from state.u. sigma_hat is a constant for the adjoint.
template <typename S>
Tensor<S> spectral_normalize(const Tensor<S>& weight, SpectralState<S>& state) {
  const auto m = detail::as_matrix(weight);
  if (!state.u.defined() || state.u.numel() != m.rows) {
    throw DimensionError("spectral_normalize: state vector does not match weight rows");
  }
  double sigma = 0;
  if (state.frozen && state.sigma > S(0)) {
    sigma = state.sigma;
  } else {
    std::vector<double> u(state.u.values().begin(), state.u.values().end()), v;
    const std::size_t sweeps = std::max<std::size_t>(state.power_iterations, 1);
    for (std::size_t i = 0; i < sweeps; ++i) sigma = detail::power_sweep(weight.data(), m.rows, m.cols, u, v);
    if (!state.frozen) {
      for (std::size_t r = 0; r < m.rows; ++r) state.u[r] = static_cast<S>(u[r]);
    }
    sigma = std::max(sigma, 1e-12);
    state.sigma = static_cast<S>(sigma);
  }
  const S inv = static_cast<S>(1.0 / sigma);
  Tensor<S> out(weight.shape());
  for (std::size_t i = 0; i < weight.numel(); ++i) out[i] = weight[i] * inv;
  if (auto* tape = detail::recording<S>({&weight})) {
    out.set_requires_grad(true);
    tape->record("spectral_normalize", out, {weight}, [out, weight, inv]() mutable {
      auto dy = out.grad();
      auto dw = weight.grad();
      for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += dy[i] * inv;
    });
  }
  require_finite(out, "spectral_normalize");
  return out;
}

}  // namespace dmac::ad
