#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "affsam/tensor.hpp"

// Differentiable operations. Every op validates shapes eagerly and, when a
// tape is active and any input requires a gradient, records its backward rule.
// Broadcasting is limited to a shared leading batch axis; everything else
// needs an explicit reshape/repeat.
namespace affsam::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

/// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// x[B, ...] + y[...], y shared across the leading batch axis.
Tensor add_batch(const Tensor& x, const Tensor& y);
/// x[B, C, H, W] + bias[C]
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Matrix product over the last two axes.
///   [m,k]   x [k,n]   -> [m,n]
///   [B,m,k] x [k,n]   -> [B,m,n]   (b shared across the batch)
///   [B,m,k] x [B,k,n] -> [B,m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swap the last two axes.
Tensor transpose_last(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
/// Normalizes over the last axis, then applies gain[d] and bias[d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// x[...] -> [batch, ...]
Tensor repeat_batch(const Tensor& x, std::size_t batch);

/// [B, N, D] -> [B*heads, N, D/heads]
Tensor split_heads(const Tensor& x, std::size_t heads);
/// [B*heads, N, Dh] -> [B, N, heads*Dh]
Tensor merge_heads(const Tensor& x, std::size_t heads);

/// Tokens on a square grid to channels-first: [B, s*s, C] -> [B, C, s, s].
Tensor tokens_to_grid(const Tensor& x);
/// [B, C, H, W] -> [B, H*W, C]
Tensor grid_to_tokens(const Tensor& x);

/// Kernel 2x2, stride 2 transposed convolution, no bias.
///   x[C, H, W] or x[B, C, H, W]; kernel[C, C', 2, 2] -> [(B,) C', 2H, 2W]
Tensor transposed_conv2x2(const Tensor& x, const Tensor& kernel);

/// Bilinear resize of the last two axes (half-pixel centers, edge clamped).
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Row gather: table[V, D], ids (B rows of N ids) -> [B, N, D].
Tensor embedding(const Tensor& table, const std::vector<std::vector<int>>& ids);

/// [B, C, H, W] -> [B, (H/p)*(W/p), C*p*p], patches in row-major order.
Tensor patchify(const Tensor& image, std::size_t patch);

/// sum_i weights[i] * parts[i]; all parts share a shape, weights is [j].
Tensor weighted_sum(std::span<const Tensor> parts, const Tensor& weights);

/// Multiplies sample b of x[B, ...] by a constant factor[b] (stochastic depth).
Tensor scale_per_sample(const Tensor& x, std::span<const double> factors);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

}  // namespace affsam::ops
