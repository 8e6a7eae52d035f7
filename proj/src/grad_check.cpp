#include "cgan/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cgan {

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                           double eps) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = loss().item();
      values[i] = saved - eps;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double a = analytic[k][i];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err >= result.max_relative_error) {
        result = {err, k, i, a, numeric};
      }
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace cgan
