#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lpattn/error.hpp"

namespace lpattn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
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

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. The gradient buffer is allocated lazily on first accumulation.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : impl_(std::make_shared<Impl>()) {
    for (auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
    impl_->value.assign(numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor of shape " + to_string(shape) + " cannot hold " +
                           std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->value.size(); }

  std::span<T> data() { return impl_->value; }
  std::span<const T> data() const { return impl_->value; }
  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return impl_->value[0];
  }
  T& operator[](std::size_t i) { return impl_->value[i]; }
  const T& operator[](std::size_t i) const { return impl_->value[i]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag) { impl_->requires_grad = flag; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient buffer, zero-initialised on first access. Gradients are
  /// bookkeeping on the shared storage, so this is available on const handles.
  std::span<T> grad_mut() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T{0});
    return impl_->grad;
  }
  void zero_grad() const { impl_->grad.clear(); }

  Tensor clone() const {
    Tensor out(shape(), std::vector<T>(impl_->value));
    out.impl_->requires_grad = impl_->requires_grad;
    return out;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// A named trainable tensor. `decay` selects whether AdamW applies weight
/// decay to it (matrix weights only).
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> t, bool decay_flag)
      : name(std::move(n)), tensor(std::move(t)), decay(decay_flag) {
    tensor.set_requires_grad(true);
  }
};

/// Records backward closures during a forward pass and replays them in
/// reverse. One tape serves exactly one backward pass. A tape constructed
/// with `recording = false` drops everything (inference mode).
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_ && !consumed_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return entries_.size(); }

  void record(std::function<void()> backward_fn) {
    if (consumed_) throw ContractError("cannot record onto a tape that has already been backpropagated");
    if (recording_) entries_.push_back(std::move(backward_fn));
  }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw ContractError("backward called twice on the same tape");
    if (!recording_) throw ContractError("backward on a non-recording tape");
    if (loss.size() != 1) throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("loss does not depend on any trainable tensor");
    loss.grad_mut()[0] = T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
    consumed_ = true;
  }

 private:
  std::vector<std::function<void()>> entries_;
  bool recording_;
  bool consumed_ = false;
};

template <typename T>
void backward(Tape<T>& tape, Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace lpattn
