// SPDX-License-Identifier: Apache-2.0
//
// Noise channel between the embedding and decoding networks. Every
// distortion maps an encoded batch (and, for cropout/dropout, the cover
// batch) to a noised batch of the same NCHW shape.
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "iga/random.hpp"
#include "iga/tensor.hpp"

namespace iga {

enum class DistortionKind { identity, crop, cropout, dropout, resize, jpeg };

std::string_view to_string(DistortionKind k);

struct DistortionSpec {
  DistortionKind kind = DistortionKind::identity;
  double crop_ratio = 0.3;     // p: kept area fraction
  double cropout_ratio = 0.3;  // p_c: area fraction taken from the encoded image
  double dropout_ratio = 0.3;  // p_d: per-pixel probability of keeping the encoded pixel
  double zoom = 0.7;           // z
  double quality = 50;         // q

  /// Parses "identity", "crop:p=0.3", "cropout:p=0.3", "dropout:p=0.3",
  /// "resize:z=0.7", "jpeg:q=50". Omitted parameters keep their defaults.
  static DistortionSpec parse(std::string_view text);
  std::string to_string() const;
  /// Throws std::invalid_argument when the active parameter leaves its interval.
  void validate() const;

  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

enum class SamplingMode { fixed, combined };

struct ChannelConfig {
  std::vector<DistortionSpec> specs;
  SamplingMode mode = SamplingMode::fixed;

  /// "combined" (the five non-identity defaults), "combined:<spec>,<spec>,..."
  /// or a single spec string.
  static ChannelConfig parse(std::string_view text);
  static ChannelConfig combined(const DistortionSpec& defaults = {});
  std::string to_string() const;
  void validate() const;
};

/// FIXED returns the single spec; COMBINED picks uniformly among the specs.
DistortionSpec sample_channel(const ChannelConfig& cfg, Rng& rng);

enum class JpegMode { train_approx, eval_real };

/// A distortion with its random draws fixed, so the same realisation can be
/// applied more than once (both attention passes see identical noise).
struct DistortionDraw {
  DistortionSpec spec;
  Tensor mask;  // selection mask for crop/cropout/dropout, NCHW
};

DistortionDraw draw_distortion(const DistortionSpec& spec, const Shape& shape, Rng& rng);
Tensor apply_distortion(const DistortionDraw& draw, const Tensor& encoded, const Tensor& cover,
                        JpegMode jpeg_mode);

Tensor identity(const Tensor& encoded);
/// Keeps a random floor(sqrt(p)H) x floor(sqrt(p)W) rectangle per image,
/// zero elsewhere.
Tensor crop(const Tensor& encoded, double p, Rng& rng);
Tensor cropout(const Tensor& encoded, const Tensor& cover, double p_c, Rng& rng);
Tensor dropout(const Tensor& encoded, const Tensor& cover, double p_d, Rng& rng);
/// Bilinear downscale by z, then bilinear upscale to the input size.
Tensor resize(const Tensor& encoded, double z);
Tensor jpeg(const Tensor& encoded, double quality, JpegMode mode);

/// Differentiable JPEG approximation with explicit zig-zag coefficient
/// counts (1..64) for the luma and chroma planes.
Tensor jpeg_coefficient_mask(const Tensor& encoded, std::size_t keep_luma,
                             std::size_t keep_chroma);
/// Coefficients retained by the approximation at quality q.
std::size_t jpeg_luma_keep(double quality);
std::size_t jpeg_chroma_keep(double quality);

/// Row-major [out, in] bilinear resampling operator, half-pixel centres.
std::vector<real> bilinear_matrix(std::size_t in, std::size_t out);

}  // namespace iga
