// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "iga/msgcodec.hpp"
#include "iga/tensor.hpp"

namespace iga {

/// PSNR reported for identical images.
inline constexpr double kPsnrCap = 100.0;

/// Fraction of positions where the two messages agree.
double bpa(const BitMessage& in, const BitMessage& out);

/// 10 log10(1 / mse) for images in [0, 1]; kPsnrCap when mse is zero.
double psnr(std::span<const real> x, std::span<const real> y);
double psnr(const Tensor& x, const Tensor& y);

/// Reed-Solomon bits-per-pixel capacity proxy k (2p - 1).
double rs_bpp(std::size_t k, double p);

}  // namespace iga
