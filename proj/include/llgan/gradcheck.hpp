#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "llgan/tensor.hpp"

namespace llgan::nn {

// Compares the analytic gradient of a scalar-valued function against central
// finite differences. Returns max over coordinates of
// |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|). Meant to run in double.
inline double grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> points, double eps = 1e-4) {
  for (auto& p : points) p.set_requires_grad(true);
  Tensor<double> y = fn(points);
  if (!y.is_scalar())
    throw std::invalid_argument("grad_check: function must be scalar-valued");
  for (auto& p : points) p.zero_grad();
  y.backward();

  double worst = 0.0;
  for (auto& p : points) {
    const std::vector<double> analytic =
        p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data()[i];
      p.data()[i] = orig + eps;
      const double fp = fn(points).item();
      p.data()[i] = orig - eps;
      const double fm = fn(points).item();
      p.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ga = analytic[i];
      const double rel =
          std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace llgan::nn
