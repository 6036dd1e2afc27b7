// SPDX-License-Identifier: Apache-2.0
//
// Convolutional networks of the hiding pipeline: feature extractor,
// embedding network, decoder and discriminator. All are stacks of
// Conv(3x3, stride 1) -> BatchNorm -> ReLU blocks.
#pragma once

#include <string>
#include <vector>

#include "iga/ops.hpp"
#include "iga/random.hpp"
#include "iga/tensor.hpp"

namespace iga {

struct NetConfig {
  std::size_t height = 128;
  std::size_t width = 128;
  std::size_t channels = 3;
  std::size_t base_width = 64;
  std::size_t extractor_blocks = 4;
  std::size_t embedder_blocks = 2;
  std::size_t decoder_blocks = 6;
  std::size_t discriminator_blocks = 3;
  std::size_t k = 30;
  std::size_t l = 16;
  std::size_t codec_hidden = 0;  // 0 selects 2k
  bool use_msgcodec = true;

  /// Width of the message actually embedded: l with message coding, k without.
  std::size_t message_width() const { return use_msgcodec ? l : k; }
  void validate() const;
};

struct Mode {
  bool training = false;
  bool update_stats = false;
  static Mode train(bool update_stats = true) { return {true, update_stats}; }
  static Mode eval() { return {false, false}; }
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct NamedBuffer {
  std::string name;
  std::vector<real>* values;
};

class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(std::size_t in, std::size_t out, Rng& rng);
  Tensor forward(const Tensor& x, Mode mode);
  void collect(const std::string& prefix, std::vector<NamedTensor>& params,
               std::vector<NamedBuffer>& buffers);

 private:
  Tensor weight_, gamma_, beta_;
  ops::BatchNormState bn_;
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const NetConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& attended, Mode mode);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers);

 private:
  std::vector<ConvBlock> blocks_;
};

/// F_co: extractor features of the attended cover concatenated with the
/// spatially expanded message.
Tensor extract_features(FeatureExtractor& extractor, const Tensor& attended,
                        const Tensor& message_planes, Mode mode);

class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  EmbeddingNet(const NetConfig& cfg, Rng& rng);
  /// Encoded image sigmoid(logit(cover) + residual(F_co, cover)), in (0, 1).
  Tensor forward(const Tensor& features, const Tensor& cover, Mode mode);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers);

  static constexpr real kLogitEps = real(1e-3);

 private:
  std::vector<ConvBlock> blocks_;
  Tensor out_w_, out_b_;
};

class DecoderNet {
 public:
  DecoderNet() = default;
  DecoderNet(const NetConfig& cfg, Rng& rng);
  /// [N, 3, H, W] -> [N, message_width]
  Tensor forward(const Tensor& noised, Mode mode);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers);

 private:
  std::size_t height_ = 0, width_ = 0;
  std::vector<ConvBlock> blocks_;
  Tensor head_w_, head_b_;
};

class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const NetConfig& cfg, Rng& rng);
  /// Probability that each image is a cover, clamped to [eps, 1 - eps]. [N, 1]
  Tensor forward(const Tensor& images, Mode mode);
  void collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers);

  static constexpr real kProbEps = real(1e-6);

 private:
  std::vector<ConvBlock> blocks_;
  Tensor head_w_, head_b_;
};

}  // namespace iga
