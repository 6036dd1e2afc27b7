// SPDX-License-Identifier: Apache-2.0
//
// Pixel attention masks. The inverse gradient mask gives high weight to
// pixels whose message-reconstruction gradient is small; the Sobel mask is
// an edge-magnitude alternative with the same shape and range.
#pragma once

#include <string_view>

#include "iga/tensor.hpp"

namespace iga {

enum class MaskSource { iga, sobel, ones };
enum class Normalization { minmax, sigmoid };

std::string_view to_string(MaskSource s);
MaskSource parse_mask_source(std::string_view s);
std::string_view to_string(Normalization n);
Normalization parse_normalization(std::string_view s);

/// Values in [0, 1], same NCHW shape as the cover batch. Never requires grad.
struct AttentionMask {
  Tensor values;
  MaskSource source = MaskSource::ones;
};

/// Below this min-max range a per-image normalisation is degenerate.
inline constexpr double kDegenerateRange = 1e-12;

/// A = 1 - g(|grad|) for every image of the batch. MINMAX normalises the
/// gradient magnitude per image (a degenerate range gives an all-ones mask);
/// SIGMOID applies the logistic function to the signed gradient.
/// Throws GradError("diverged gradients") on non-finite input.
AttentionMask iga_mask(const Tensor& grad_image, Normalization g);

AttentionMask ones_mask(const Shape& shape);

/// Per-channel Sobel gradient magnitude with replicated borders, min-max
/// normalised per image. A flat image maps to all zeros.
AttentionMask sobel_mask(const Tensor& cover);

/// Hadamard product of mask and cover; differentiable in the cover.
Tensor apply_attention(const Tensor& cover, const AttentionMask& mask);

/// [N, l] -> [N, l, H, W] message planes.
Tensor expand_message(const Tensor& encoded, std::size_t height, std::size_t width);

}  // namespace iga
