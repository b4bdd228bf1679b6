#include "modnet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace modnet {

template <class T>
int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

template <class T>
bool Tensor<T>::all_finite() const {
  for (T v : value)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <class T>
void Tensor<T>::check_finite(const std::string& what) const {
  if (!all_finite()) throw InternalError("non-finite values in " + what + " of shape " + shape_str(shape));
}

template <class T>
TensorPtr<T> Tensor<T>::create(std::vector<int> shape, bool requires_grad) {
  auto t = std::make_shared<Tensor<T>>();
  int64_t n = shape_numel<T>(shape);
  t->shape = std::move(shape);
  t->value.assign(static_cast<size_t>(n), T(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(static_cast<size_t>(n), T(0));
  return t;
}

template <class T>
TensorPtr<T> Tensor<T>::full(std::vector<int> shape, T v) {
  auto t = create(std::move(shape), false);
  for (auto& x : t->value) x = v;
  return t;
}

template <class T>
TensorPtr<T> Tensor<T>::from(std::vector<int> shape, std::vector<T> data, bool requires_grad) {
  int64_t n = shape_numel<T>(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(shape);
  t->value = std::move(data);
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(static_cast<size_t>(n), T(0));
  return t;
}

namespace {

// Iterative DFS post-order. Marks: 0 unvisited, 1 on stack (cycle check),
// 2 done.
template <class T>
void topo_sort(Tensor<T>* root, std::vector<Tensor<T>*>& order) {
  std::unordered_set<Tensor<T>*> done, active;
  std::vector<std::pair<Tensor<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  active.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Tensor<T>* child = node->inputs[next].get();
      ++next;
      if (done.count(child)) continue;
      if (active.count(child)) throw InternalError("cycle detected in autodiff graph");
      stack.emplace_back(child, 0);
      active.insert(child);
    } else {
      order.push_back(node);
      done.insert(node);
      active.erase(node);
      stack.pop_back();
    }
  }
}

}  // namespace

template <class T>
void backward(const TensorPtr<T>& loss) {
  if (!loss) throw UsageError("backward: null loss tensor");
  if (loss->numel() != 1)
    throw UsageError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
  if (!loss->requires_grad)
    throw UsageError("backward: loss does not depend on any differentiable tensor");

  std::vector<Tensor<T>*> order;
  topo_sort(loss.get(), order);

  for (Tensor<T>* t : order) {
    if (!t->requires_grad) continue;
    t->ensure_grad();
    t->grad_live = true;
  }
  loss->grad[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor<T>* t = *it;
    if (t->backprop) t->backprop(*t);
  }
}

template struct Tensor<float>;
template struct Tensor<double>;
template int64_t shape_numel<float>(const std::vector<int>&);
template int64_t shape_numel<double>(const std::vector<int>&);
template void backward<float>(const TensorPtr<float>&);
template void backward<double>(const TensorPtr<double>&);

}  // namespace modnet
