#include "modnet/optim.hpp"

#include <cmath>

namespace modnet {

std::string opt_kind_name(OptKind k) { return k == OptKind::Adam ? "adam" : "sgd"; }

OptKind parse_opt_kind(const std::string& s) {
  if (s == "adam" || s == "adaptive") return OptKind::Adam;
  if (s == "sgd") return OptKind::Sgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

template <class T>
Optimizer<T>::Optimizer(std::vector<TensorPtr<T>> params, OptKind kind, T lr) : kind_(kind), lr_(lr) {
  slots_.reserve(params.size());
  for (auto& p : params) {
    if (!p || !p->requires_grad) throw UsageError("Optimizer: parameters must require gradients");
    Slot s;
    s.param = p;
    if (kind_ == OptKind::Adam) {
      s.m.assign(p->value.size(), T(0));
      s.v.assign(p->value.size(), T(0));
    }
    slots_.push_back(std::move(s));
  }
}

template <class T>
void Optimizer<T>::step() {
  bool any_live = false;
  for (auto& s : slots_) any_live = any_live || s.param->grad_live;
  if (!any_live)
    throw UsageError("Optimizer::step: no gradients present; run backward() before stepping");

  ++step_count_;
  if (kind_ == OptKind::Adam) {
    T bc1 = T(1) - std::pow(beta1, static_cast<T>(step_count_));
    T bc2 = T(1) - std::pow(beta2, static_cast<T>(step_count_));
    for (auto& s : slots_) {
      auto& p = *s.param;
      p.ensure_grad();
      for (size_t i = 0; i < p.value.size(); ++i) {
        T g = p.grad[i];
        s.m[i] = beta1 * s.m[i] + (T(1) - beta1) * g;
        s.v[i] = beta2 * s.v[i] + (T(1) - beta2) * g * g;
        T mhat = s.m[i] / bc1;
        T vhat = s.v[i] / bc2;
        p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
      }
    }
  } else {
    for (auto& s : slots_) {
      auto& p = *s.param;
      p.ensure_grad();
      for (size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr_ * p.grad[i];
    }
  }
  for (auto& s : slots_) s.param->zero_grad();
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace modnet
