// SPDX-License-Identifier: Apache-2.0
//
// The full hiding model and its forward pipeline:
//
//   bits -> [message encoder] -> M_en -> planes ----------------+
//   cover -> mask (x) cover -> feature extractor -> F_co (+) ---+-> embedder -> I_en
//   I_en -> distortion -> decoder -> M_de -> [message decoder] -> M_out
#pragma once

#include <optional>

#include "iga/attention.hpp"
#include "iga/distortions.hpp"
#include "iga/msgcodec.hpp"
#include "iga/nets.hpp"

namespace iga {

struct Model {
  NetConfig config;
  MsgCodecParams codec;  // unused when !config.use_msgcodec
  FeatureExtractor extractor;
  EmbeddingNet embedder;
  DecoderNet decoder;
  Discriminator discriminator;

  static Model create(const NetConfig& config, std::uint64_t seed);

  /// Message coder, extractor, embedder and decoder.
  std::vector<NamedTensor> generator_params();
  std::vector<NamedTensor> discriminator_params();
  std::vector<NamedBuffer> buffers();

  /// M_en; the raw bits when message coding is off.
  Tensor encode_message(const Tensor& bits) const;
  /// M_out from M_de; M_de itself when message coding is off.
  Tensor decode_message(const Tensor& decoded) const;
};

struct PipelineOutputs {
  Tensor encoded_message;  // M_en
  Tensor encoded;          // I_en
  Tensor noised;           // I_no
  Tensor decoded;          // M_de
  Tensor recovered;        // M_out
};

/// One forward pass. `draw` is the realised distortion (identity if empty).
PipelineOutputs run_pipeline(Model& model, const Tensor& cover, const Tensor& bits,
                             const AttentionMask& mask, const DistortionDraw* draw,
                             JpegMode jpeg_mode, Mode mode);

struct MaskSettings {
  MaskSource source = MaskSource::iga;
  Normalization normalization = Normalization::minmax;
  real lambda_mr = real(1.0);
};

/// Attention mask for a cover batch. For IGA this is the first of the two
/// passes: the pipeline runs with an all-ones mask, the weighted
/// reconstruction loss is differentiated with respect to the cover, and the
/// gradient is turned into a detached mask. Running statistics are never
/// updated by this pass.
AttentionMask compute_mask(Model& model, const Tensor& cover, const Tensor& bits,
                           const MaskSettings& settings, const DistortionDraw* draw,
                           JpegMode jpeg_mode, Mode mode);

/// Inference-time embedding (eval mode; the IGA pass uses no distortion).
Tensor embed_batch(Model& model, const Tensor& cover, const Tensor& bits,
                   const MaskSettings& settings);
/// Inference-time recovery: M_out for every image of the batch.
Tensor extract_batch(Model& model, const Tensor& images);

}  // namespace iga
