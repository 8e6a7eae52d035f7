#pragma once

#include <functional>
#include <vector>

#include "cgan/tensor.hpp"

namespace cgan {

struct GradCheckResult {
  double max_relative_error = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
};

/// Compares backward() against central differences of `loss` for every entry
/// of every tensor in `params`. The error of one entry is
/// |analytic - numeric| / max(1, |analytic|, |numeric|). `loss` must be
/// deterministic (freeze all randomness inside it).
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                           double eps = 1e-5);

}  // namespace cgan
