#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modnet/tensor.hpp"

namespace modnet {

enum class OptKind { Adam, Sgd };

std::string opt_kind_name(OptKind k);
OptKind parse_opt_kind(const std::string& s);

// Adaptive-moment (default) or plain gradient-descent updates over a fixed
// parameter list. step() consumes the gradients and zeroes them; calling it
// before any backward() has populated gradients is a usage error.
template <class T>
class Optimizer {
 public:
  Optimizer(std::vector<TensorPtr<T>> params, OptKind kind, T lr);

  void step();
  int64_t step_count() const { return step_count_; }
  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);

 private:
  struct Slot {
    TensorPtr<T> param;
    std::vector<T> m, v;
  };
  std::vector<Slot> slots_;
  OptKind kind_;
  T lr_;
  int64_t step_count_ = 0;
};

}  // namespace modnet
