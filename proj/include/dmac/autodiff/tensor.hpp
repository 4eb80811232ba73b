#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dmac/error.hpp"

namespace dmac::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

enum class Mode { Train, Eval };

template <typename S>
struct TensorStorage {
  Shape shape;
  std::vector<S> values;
  std::vector<S> grad;  // empty until the first adjoint touches it
  bool requires_grad = false;
};

// Reference-counted dense array. Copies share storage; use clone() or
// detach() for an independent copy.
template <typename S>
class Tensor {
 public:
  using value_type = S;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S(0))
      : d_(std::make_shared<TensorStorage<S>>()) {
    d_->values.assign(element_count(shape), fill);
    d_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<S> values)
      : d_(std::make_shared<TensorStorage<S>>()) {
    if (element_count(shape) != values.size()) {
      throw DimensionError("tensor: shape " + to_string(shape) + " holds " +
                           std::to_string(element_count(shape)) +
                           " elements, got " + std::to_string(values.size()));
    }
    d_->shape = std::move(shape);
    d_->values = std::move(values);
  }

  static Tensor scalar(S value) { return Tensor(Shape{1}, std::vector<S>{value}); }

  bool defined() const { return static_cast<bool>(d_); }

  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t numel() const { return d_->values.size(); }

  std::span<S> values() { return d_->values; }
  std::span<const S> values() const { return d_->values; }
  S* data() { return d_->values.data(); }
  const S* data() const { return d_->values.data(); }

  S& operator[](std::size_t i) { return d_->values[i]; }
  S operator[](std::size_t i) const { return d_->values[i]; }

  S item() const {
    if (numel() != 1) {
      throw DimensionError("item(): tensor of shape " + to_string(shape()) +
                           " is not a scalar");
    }
    return d_->values[0];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }

  // Gradient accumulator, allocated as zeros on first use. It belongs to the
  // shared storage rather than the value, so const handles may accumulate.
  std::span<S> grad() const {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), S(0));
    return d_->grad;
  }

  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), S(0));
  }
  void drop_grad() { d_->grad.clear(); }

  // Same values in fresh storage, outside any recorded graph.
  Tensor detach() const { return Tensor(shape(), d_->values); }
  Tensor clone() const {
    Tensor t = detach();
    t.set_requires_grad(requires_grad());
    return t;
  }

  bool shares_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorStorage<S>> d_;
};

template <typename Range>
bool all_finite(const Range& xs) {
  for (auto x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

template <typename S>
void require_finite(const Tensor<S>& t, std::string_view op) {
  if (!all_finite(t.values())) {
    throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

// Ordered record of executed operations. backward() replays the adjoints in
// exact reverse order of recording.
template <typename S>
class Tape {
 public:
  using Adjoint = std::function<void()>;

  struct Entry {
    std::string op;
    Tensor<S> output;
    std::vector<Tensor<S>> inputs;
    Adjoint adjoint;
  };

  void record(std::string op, Tensor<S> output, std::vector<Tensor<S>> inputs,
              Adjoint adjoint) {
    entries_.push_back(
        Entry{std::move(op), std::move(output), std::move(inputs), std::move(adjoint)});
  }

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable input.
  // Returns the op names in the order their adjoints ran.
  std::vector<std::string> backward(Tensor<S> loss) {
    if (loss.numel() != 1) {
      throw ParameterError("backward: loss must be a scalar, got shape " +
                           to_string(loss.shape()));
    }
    std::vector<std::string> visited;
    if (!loss.requires_grad()) return visited;
    loss.grad()[0] += S(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->adjoint();
      visited.push_back(it->op);
    }
    for (const auto& e : entries_) {
      for (const auto& in : e.inputs) {
        if (in.has_grad() && !all_finite(in.grad())) {
          throw NumericError(e.op + ": non-finite gradient");
        }
      }
    }
    return visited;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
template <typename S>
Tape<S>*& active_tape_slot() {
  thread_local Tape<S>* tape = nullptr;
  return tape;
}
}  // namespace detail

template <typename S>
Tape<S>* active_tape() {
  return detail::active_tape_slot<S>();
}

// Makes `tape` the recording target for the current thread while alive.
template <typename S>
class TapeScope {
 public:
  explicit TapeScope(Tape<S>& tape) : previous_(detail::active_tape_slot<S>()) {
    detail::active_tape_slot<S>() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot<S>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<S>* previous_;
};

// Suspends recording while alive.
template <typename S>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape_slot<S>()) {
    detail::active_tape_slot<S>() = nullptr;
  }
  ~NoGradScope() { detail::active_tape_slot<S>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<S>* previous_;
};

namespace detail {

// Returns the tape to record on, or nullptr when no input needs a gradient.
template <typename S>
Tape<S>* recording(std::initializer_list<const Tensor<S>*> inputs) {
  Tape<S>* tape = active_tape<S>();
  if (!tape) return nullptr;
  for (const Tensor<S>* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename S>
Tape<S>* recording(const std::vector<Tensor<S>>& inputs) {
  Tape<S>* tape = active_tape<S>();
  if (!tape) return nullptr;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return tape;
  }
  return nullptr;
}

}  // namespace detail

// Fingerprint of every piecewise decision (ReLU side, pooling winner, clamp,
// correlation selection) taken while alive. Two evaluations with equal
// fingerprints ran on the same smooth piece of the function.
class BranchTrace {
 public:
  BranchTrace() : previous_(slot()) { slot() = this; }
  ~BranchTrace() { slot() = previous_; }
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;

  static BranchTrace* active() { return slot(); }
  void note(std::uint64_t v) {
    hash_ = (hash_ ^ v) * 0x100000001b3ull;
    ++count_;
  }
  std::uint64_t fingerprint() const { return hash_ ^ count_; }

 private:
  static BranchTrace*& slot() {
    thread_local BranchTrace* t = nullptr;
    return t;
  }
  BranchTrace* previous_;
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
  std::uint64_t count_ = 0;
};

namespace detail {

inline void note_branch(std::uint64_t v) {
  if (auto* t = BranchTrace::active()) t->note(v);
}

}  // namespace detail

}  // namespace dmac::ad
