#pragma once

#include "lune/tensor.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace lune {

using TokenId = std::int32_t;
using Rng = std::mt19937_64;

// Differentiable primitives. Shapes must match exactly; the only broadcast is
// add_bias over the last axis.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
Tensor linear(const Tensor& x, const Tensor& w);  // x * w^T, w stored [out x in]
Tensor bmm(const Tensor& a, const Tensor& b);     // [B x m x k] * [B x k x n]

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor sum(const Tensor& x);

Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, double eps = 1e-5);
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

Tensor transpose(const Tensor& x);  // rank-2 only
Tensor swap_axes(const Tensor& x, std::size_t a, std::size_t b);
Tensor reshape(const Tensor& x, Shape shape);

// Sets entries above the diagonal of the trailing [T x T] block to -inf.
Tensor causal_mask(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

// Mean over masked rows of -log softmax(logits)[t, target_t].
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> mask);

// sum_t weights[t] * -log softmax(logits)[t, target_t]; zero-weight rows are skipped.
Tensor weighted_nll(const Tensor& logits, std::span<const TokenId> targets,
                    std::span<const double> weights);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

}  // namespace lune
