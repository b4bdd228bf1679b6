#pragma once

#include <functional>
#include <string>
#include <vector>

#include "modnet/tensor.hpp"

namespace modnet {

struct GradCheckEntry {
  std::string param;
  int64_t index;
  double analytic;
  double numeric;
  double rel_err;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> flagged;  // entries above tolerance
  int64_t checked = 0;
  bool ok() const { return flagged.empty(); }
};

// Compares analytic gradients against central finite differences at 64-bit
// precision. `forward` must rebuild the graph from the given parameters and
// return a scalar loss; it is called 1 + 2 * numel times, so keep shapes
// small. Stochastic forwards (train-mode batchnorm with running-stat updates)
// are rejected: the function is evaluated twice up front and must agree
// bit-for-bit.
GradCheckReport grad_check(const std::function<TensorPtr<double>()>& forward,
                           const std::vector<std::pair<std::string, TensorPtr<double>>>& params,
                           double tolerance, double fd_step = 1e-4);

}  // namespace modnet
