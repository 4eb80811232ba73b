#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dmac/autodiff/tensor.hpp"

namespace dmac::ad {

template <typename S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
  bool trainable;
};

// Named trainable parameters and non-trainable buffers (running statistics,
// power-iteration vectors) in registration order.
template <typename S>
class ParameterSet {
 public:
  Tensor<S> add_parameter(std::string name, Tensor<S> t) {
    t.set_requires_grad(true);
    return insert(std::move(name), std::move(t), true);
  }

  Tensor<S> add_buffer(std::string name, Tensor<S> t) {
    return insert(std::move(name), std::move(t), false);
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  Tensor<S> get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ParameterError("unknown parameter '" + std::string(name) + "'");
    return entries_[it->second].tensor;
  }

  const std::vector<NamedTensor<S>>& entries() const { return entries_; }

  std::vector<NamedTensor<S>> trainable() const {
    std::vector<NamedTensor<S>> out;
    for (const auto& e : entries_) {
      if (e.trainable) out.push_back(e);
    }
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.drop_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (e.trainable) n += e.tensor.numel();
    }
    return n;
  }

 private:
  Tensor<S> insert(std::string name, Tensor<S> t, bool trainable) {
    if (contains(name)) throw ParameterError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), t, trainable});
    return t;
  }

  std::vector<NamedTensor<S>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename S, typename Rng>
Tensor<S> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<S> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(dist(rng));
  return t;
}

// Zero-mean normal with std sqrt(2 / fan_in).
template <typename S, typename Rng>
Tensor<S> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return normal_tensor<S>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace dmac::ad
