#pragma once

// First-order optimizers over the trainable entries of a ParameterSet. Both
// read the gradient accumulated on each parameter (absent means zero) and
// keep per-parameter state keyed by name so checkpoints can restore it.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmac/autodiff/parameters.hpp"

namespace dmac::train {

using ad::ParameterSet;
using ad::Tensor;

// One named state array per (parameter, slot), e.g. "head.rate1.out.weight:m".
template <typename S>
struct StateArray {
  std::string name;
  std::vector<S>* values;
};

namespace detail {

template <typename S>
std::vector<S> gradient_of(const Tensor<S>& p) {
  if (!p.has_grad()) return std::vector<S>(p.numel(), S(0));
  auto g = p.grad();
  return {g.begin(), g.end()};
}

template <typename S>
void require_finite_parameter(const ad::NamedTensor<S>& e, const char* opt) {
  if (!ad::all_finite(e.tensor.values())) {
    throw NumericError(std::string(opt) + " step produced a non-finite value in '" + e.name + "'");
  }
}

template <typename S>
std::vector<S>& slot(std::map<std::string, std::vector<S>>& m, const ad::NamedTensor<S>& e) {
  auto& v = m[e.name];
  if (v.empty()) v.assign(e.tensor.numel(), S(0));
  if (v.size() != e.tensor.numel()) {
    throw DimensionError("optimizer state for '" + e.name + "' has " + std::to_string(v.size()) +
                         " entries, parameter has " + std::to_string(e.tensor.numel()));
  }
  return v;
}

}  // namespace detail

template <typename S>
class Adam {
 public:
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(double learning_rate) : lr(learning_rate) {
    if (!(learning_rate > 0)) throw ParameterError("adam: learning rate must be > 0");
  }

  void step(ParameterSet<S>& params) {
    ++t_;
    const double c1 = 1 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(beta2, static_cast<double>(t_));
    for (const auto& e : params.trainable()) {
      auto& m = detail::slot(m_, e);
      auto& v = detail::slot(v_, e);
      const auto g = detail::gradient_of(e.tensor);
      Tensor<S> p = e.tensor;
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = static_cast<S>(beta1 * m[i] + (1 - beta1) * g[i]);
        v[i] = static_cast<S>(beta2 * v[i] + (1 - beta2) * double(g[i]) * g[i]);
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        p[i] = static_cast<S>(p[i] - lr * mhat / (std::sqrt(vhat) + eps));
      }
      detail::require_finite_parameter(e, "adam");
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }

  std::vector<StateArray<S>> state(const ParameterSet<S>& params) {
    std::vector<StateArray<S>> out;
    for (const auto& e : params.trainable()) {
      out.push_back({e.name + ":m", &detail::slot(m_, e)});
      out.push_back({e.name + ":v", &detail::slot(v_, e)});
    }
    return out;
  }

 private:
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<S>> m_, v_;
};

template <typename S>
class Adadelta {
 public:
  double lr = 1.0, rho = 0.9, eps = 1e-6;

  Adadelta() = default;
  explicit Adadelta(double learning_rate) : lr(learning_rate) {
    if (!(learning_rate > 0)) throw ParameterError("adadelta: learning rate must be > 0");
  }

  void step(ParameterSet<S>& params) {
    ++t_;
    for (const auto& e : params.trainable()) {
      auto& sq_grad = detail::slot(sq_grad_, e);
      auto& sq_update = detail::slot(sq_update_, e);
      const auto g = detail::gradient_of(e.tensor);
      Tensor<S> p = e.tensor;
      for (std::size_t i = 0; i < g.size(); ++i) {
        sq_grad[i] = static_cast<S>(rho * sq_grad[i] + (1 - rho) * double(g[i]) * g[i]);
        const double dx = -std::sqrt(sq_update[i] + eps) / std::sqrt(sq_grad[i] + eps) * g[i];
        sq_update[i] = static_cast<S>(rho * sq_update[i] + (1 - rho) * dx * dx);
        p[i] = static_cast<S>(p[i] + lr * dx);
      }
      detail::require_finite_parameter(e, "adadelta");
    }
  }

  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }

  std::vector<StateArray<S>> state(const ParameterSet<S>& params) {
    std::vector<StateArray<S>> out;
    for (const auto& e : params.trainable()) {
      out.push_back({e.name + ":sq_grad", &detail::slot(sq_grad_, e)});
      out.push_back({e.name + ":sq_update", &detail::slot(sq_update_, e)});
    }
    return out;
  }

 private:
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<S>> sq_grad_, sq_update_;
};

}  // namespace dmac::train
