#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cgan/tensor.hpp"

namespace cgan {

// Differentiable primitives. Every op validates shapes, rejects non-finite
// results, and records a backward rule when an input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k] x [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k] x [n,k]^T

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// x [..., n] + bias [n], broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);

/// Elementwise product with a constant mask (dropout, padding). The mask
/// never receives a gradient.
Tensor apply_mask(const Tensor& x, std::span<const double> mask);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
/// [A, B, ...] -> [B, A, ...]
Tensor swap_leading(const Tensor& x);
/// [B,H] x T  ->  [B,T,H]
Tensor stack_time(const std::vector<Tensor>& steps);

/// Row lookup: weight [V,E], ids (n) -> [n,E].
Tensor embedding(const Tensor& weight, std::span<const int> ids);

// Pooling over the time axis of [B,T,H]. `lengths` (size B, each in 1..T)
// masks padded positions; an empty span means every row has length T.
Tensor max_pool_time(const Tensor& h, std::span<const std::size_t> lengths = {});
Tensor mean_pool_time(const Tensor& h, std::span<const std::size_t> lengths = {});
Tensor last_time(const Tensor& h, std::span<const std::size_t> lengths = {});

/// Along the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t features = 0)
      : running_mean(features, 0.0), running_var(features, 1.0) {}
};

/// x [B,F]. Train mode normalizes by batch statistics (biased variance) and
/// updates the running averages; eval mode uses the running averages.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, bool train);

/// Mean negative log-likelihood of integer targets under logits [N,V].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
/// Per-row entries x[i, ids[i]] of x [N,V] -> [N].
Tensor pick(const Tensor& x, std::span<const int> ids);
/// Mean binary cross-entropy of sigmoid(logits) against 0/1 labels.
Tensor bce_with_logits(const Tensor& logits, std::span<const double> labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace cgan
