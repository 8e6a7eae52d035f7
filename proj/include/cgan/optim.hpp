#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgan/tensor.hpp"

namespace cgan {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.7;
  double beta2 = 0.8;
  double epsilon = 1e-8;
  double learning_rate = 3e-4;

  static AdamState for_params(const ParamList& params, double learning_rate,
                              double beta1 = 0.7, double beta2 = 0.8, double epsilon = 1e-8);
};

/// One bias-corrected Adam update from the params' accumulated grads.
/// Throws NumericError (and leaves everything untouched) on a non-finite grad.
void adam_step(ParamList& params, AdamState& state);

void zero_grad(ParamList& params);
double grad_norm(const ParamList& params);
/// Rescales grads so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(ParamList& params, double max_norm);

}  // namespace cgan
