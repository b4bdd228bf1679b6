#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "modnet/common.hpp"

namespace modnet {

template <class T>
struct Tensor;

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// N-dimensional array with an optional gradient buffer and the reverse-mode
// graph edge that produced it. Canonical image layout is (batch, channels,
// height, width), row-major. Values are immutable after construction except
// grad, batchnorm running statistics, and optimizer writes to parameters.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // same length as value iff requires_grad
  bool requires_grad = false;
  bool grad_live = false;  // set by backward(), cleared by the optimizer

  // graph: inputs this node was computed from, and the pull-back that
  // accumulates this->grad into their grads
  std::vector<TensorPtr<T>> inputs;
  std::function<void(Tensor&)> backprop;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
  void zero_grad() {
    grad.assign(value.size(), T(0));
    grad_live = false;
  }

  bool all_finite() const;
  void check_finite(const std::string& what) const;

  static TensorPtr<T> create(std::vector<int> shape, bool requires_grad = false);
  static TensorPtr<T> full(std::vector<int> shape, T v);
  static TensorPtr<T> from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false);
  static TensorPtr<T> scalar(T v) { return from({1}, {v}); }
};

template <class T>
int64_t shape_numel(const std::vector<int>& shape);

std::string shape_str(const std::vector<int>& shape);

// When grad recording is off, ops skip pull-back closures and saved buffers;
// outputs come back with requires_grad = false. Used for evaluation passes.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Reverse-mode sweep from a scalar loss: seeds d(loss)/d(loss) = 1 and runs
// every recorded pull-back in reverse topological order, accumulating (+=)
// into grad buffers of requires_grad tensors.
template <class T>
void backward(const TensorPtr<T>& loss);

// Named parameter collection. Iteration order is insertion order, which makes
// initialization, checkpoints and optimizer traversal deterministic.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, TensorPtr<T>>> items;

  TensorPtr<T> add(const std::string& name, TensorPtr<T> t) {
    if (has(name)) throw UsageError("ParamSet: duplicate parameter name '" + name + "'");
    items.emplace_back(name, t);
    return t;
  }
  bool has(const std::string& name) const {
    for (auto& [k, v] : items)
      if (k == name) return true;
    return false;
  }
  const TensorPtr<T>& at(const std::string& name) const {
    for (auto& [k, v] : items)
      if (k == name) return v;
    throw IndexError("ParamSet: no parameter named '" + name + "'");
  }
  size_t size() const { return items.size(); }
};

}  // namespace modnet
