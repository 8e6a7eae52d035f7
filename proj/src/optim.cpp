#include "cgan/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cgan {

AdamState AdamState::for_params(const ParamList& params, double learning_rate, double beta1,
                                double beta2, double epsilon) {
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
    throw std::invalid_argument("adam: betas must lie in (0, 1)");
  }
  if (!(learning_rate >= 0) || !(epsilon > 0)) {
    throw std::invalid_argument("adam: learning rate must be >= 0 and epsilon > 0");
  }
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  s.learning_rate = learning_rate;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.size(), 0.0);
    s.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adam_step(ParamList& params, AdamState& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step", "optimizer state tracks " +
                                      std::to_string(state.first_moment.size()) + " tensors, got " +
                                      std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (state.first_moment[k].size() != p.tensor.size() ||
        state.second_moment[k].size() != p.tensor.size()) {
      throw ShapeError("adam_step", "moment size mismatch for " + p.name);
    }
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.node()->grad) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + p.name);
    }
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto values = params[k].tensor.mutable_values();
    const auto grad = params[k].tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = state.beta1 * m[i] + (1 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1 - state.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

void zero_grad(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

double grad_norm(const ParamList& params) {
  double total = 0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.node()->grad) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(ParamList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (auto& g : p.tensor.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace cgan
