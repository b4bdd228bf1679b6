#include "modnet/gradcheck.hpp"

#include <cmath>

namespace modnet {

GradCheckReport grad_check(const std::function<TensorPtr<double>()>& forward,
                           const std::vector<std::pair<std::string, TensorPtr<double>>>& params,
                           double tolerance, double fd_step) {
  auto eval = [&]() {
    auto loss = forward();
    if (!loss || loss->numel() != 1) throw UsageError("grad_check: forward must return a scalar");
    return loss;
  };

  // determinism probe
  double v0 = eval()->value[0];
  double v1 = eval()->value[0];
  if (v0 != v1)
    throw UsageError("grad_check: forward is not deterministic (" + std::to_string(v0) + " vs " +
                     std::to_string(v1) + "); freeze batchnorm running-stat updates");

  for (auto& [name, p] : params) p->zero_grad();
  auto loss = eval();
  backward(loss);

  GradCheckReport report;
  for (auto& [name, p] : params) {
    std::vector<double> analytic = p->grad;
    for (int64_t i = 0; i < p->numel(); ++i) {
      double keep = p->value[i];
      auto central = [&](double h) {
        p->value[i] = keep + h;
        double up = eval()->value[0];
        p->value[i] = keep - h;
        double down = eval()->value[0];
        p->value[i] = keep;
        return (up - down) / (2.0 * h);
      };
      double a = analytic[static_cast<size_t>(i)];
      auto rel_of = [&](double numeric) {
        return std::fabs(a - numeric) / std::max({1e-8, std::fabs(a), std::fabs(numeric)});
      };
      double numeric = central(fd_step);
      double rel = rel_of(numeric);
      // A difference window that straddles a relu kink or a max-pool tie
      // produces an invalid estimate; shrinking the step makes such an
      // estimate converge to the derivative, while a wrong analytic gradient
      // stays wrong at every step.
      for (double h = fd_step / 4; rel > tolerance && h > fd_step / 64; h /= 4) {
        numeric = central(h);
        rel = rel_of(numeric);
      }
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.checked;
      if (rel > tolerance) report.flagged.push_back({name, i, a, numeric, rel});
    }
    p->zero_grad();
  }
  return report;
}

}  // namespace modnet
