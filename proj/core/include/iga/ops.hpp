// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Image tensors are laid out NCHW.
#pragma once

#include <span>
#include <vector>

#include "iga/tensor.hpp"

namespace iga::ops {

// Elementwise, operands of identical shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// mask * a + (1 - mask) * b, with a constant mask.
Tensor blend(const Tensor& a, const Tensor& b, const Tensor& mask);

Tensor scale(const Tensor& a, real s);
Tensor add_scalar(const Tensor& a, real s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
/// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor& a, real lo, real hi);
/// log(x / (1 - x)) after clamping x to [eps, 1 - eps].
Tensor logit(const Tensor& a, real eps);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean squared difference, a scalar.
Tensor mse(const Tensor& a, const Tensor& b);
/// Scalar sum of scalars.
Tensor add_all(std::span<const Tensor> terms);

Tensor reshape(const Tensor& a, Shape shape);

/// [n, m] x [m, p] -> [n, p]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x [n, in] * w [in, out] + b [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Stride-1 convolution. x [N,C,H,W], w [O,C,kh,kw], b [O] (may be empty
/// shape {0}); zero padding `pad` on every side.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t pad);

struct BatchNormState {
  std::vector<real> running_mean;
  std::vector<real> running_var;
  real momentum = real(0.1);
  real eps = real(1e-5);
};

/// Per-channel normalisation over (N, H, W). In training mode the batch
/// statistics are used and, if `update_stats`, folded into the running
/// estimates; otherwise the running estimates are used.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, bool update_stats);

/// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
/// Concatenate NCHW tensors along C.
Tensor concat_channels(std::span<const Tensor> parts);
/// [N,L] -> [N,L,H,W], each value replicated over the plane.
Tensor expand_spatial(const Tensor& m, std::size_t height, std::size_t width);

/// y[n,c] = Ph * x[n,c] * Pw^T with constant Ph [Ho,H], Pw [Wo,W].
Tensor separable_map(const Tensor& x, std::span<const real> ph, std::size_t out_h,
                     std::span<const real> pw, std::size_t out_w);

/// Applies a constant 64x64 operator to every 8x8 block (row-major block
/// vectorisation) of every plane; `per_channel` holds C operators.
Tensor block_map8(const Tensor& x, std::span<const std::vector<real>> per_channel);

}  // namespace iga::ops
