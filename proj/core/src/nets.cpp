// SPDX-License-Identifier: Apache-2.0
#include "iga/nets.hpp"

#include <cmath>

namespace iga {

void NetConfig::validate() const {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw std::invalid_argument("image size " + std::to_string(height) + "x" +
                                std::to_string(width) + " must be a positive multiple of 8");
  }
  if (channels != 3) throw std::invalid_argument("only 3-channel images are supported");
  if (base_width == 0) throw std::invalid_argument("base width must be positive");
  if (extractor_blocks == 0 || embedder_blocks == 0 || decoder_blocks == 0 ||
      discriminator_blocks == 0) {
    throw std::invalid_argument("every network needs at least one conv block");
  }
  if (k == 0) throw std::invalid_argument("message length k must be positive");
  if (use_msgcodec && (l == 0 || l >= k)) {
    throw std::invalid_argument("compressed length l=" + std::to_string(l) +
                                " must satisfy 0 < l < k=" + std::to_string(k));
  }
}

namespace {

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<real> v(numel(shape));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor::variable(std::move(shape), std::move(v));
}

Tensor filled_param(Shape shape, real value) {
  return Tensor::variable(shape, std::vector<real>(numel(shape), value));
}

const Tensor& no_bias() {
  static const Tensor empty(Shape{0});
  return empty;
}

std::vector<ConvBlock> make_stack(std::size_t in, std::size_t width, std::size_t count,
                                  Rng& rng) {
  std::vector<ConvBlock> blocks;
  for (std::size_t i = 0; i < count; ++i) blocks.emplace_back(i == 0 ? in : width, width, rng);
  return blocks;
}

Tensor run_stack(std::vector<ConvBlock>& blocks, Tensor x, Mode mode) {
  for (auto& b : blocks) x = b.forward(x, mode);
  return x;
}

void collect_stack(std::vector<ConvBlock>& blocks, const std::string& prefix,
                   std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].collect(prefix + ".block" + std::to_string(i), params, buffers);
  }
}

}  // namespace

ConvBlock::ConvBlock(std::size_t in, std::size_t out, Rng& rng)
    : weight_(uniform_param({out, in, 3, 3}, in * 9, rng)),
      gamma_(filled_param({out}, real(1))),
      beta_(filled_param({out}, real(0))) {
  bn_.running_mean.assign(out, real(0));
  bn_.running_var.assign(out, real(1));
}

Tensor ConvBlock::forward(const Tensor& x, Mode mode) {
  auto y = ops::conv2d(x, weight_, no_bias(), 1);
  y = ops::batch_norm(y, gamma_, beta_, bn_, mode.training, mode.update_stats);
  return ops::relu(y);
}

void ConvBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedBuffer>& buffers) {
  params.push_back({prefix + ".weight", &weight_});
  params.push_back({prefix + ".gamma", &gamma_});
  params.push_back({prefix + ".beta", &beta_});
  buffers.push_back({prefix + ".running_mean", &bn_.running_mean});
  buffers.push_back({prefix + ".running_var", &bn_.running_var});
}

FeatureExtractor::FeatureExtractor(const NetConfig& cfg, Rng& rng)
    : blocks_(make_stack(cfg.channels, cfg.base_width, cfg.extractor_blocks, rng)) {}

Tensor FeatureExtractor::forward(const Tensor& attended, Mode mode) {
  return run_stack(blocks_, attended, mode);
}

void FeatureExtractor::collect(std::vector<NamedTensor>& params,
                               std::vector<NamedBuffer>& buffers) {
  collect_stack(blocks_, "extractor", params, buffers);
}

Tensor extract_features(FeatureExtractor& extractor, const Tensor& attended,
                        const Tensor& message_planes, Mode mode) {
  if (attended.rank() != 4 || message_planes.rank() != 4 ||
      attended.dim(0) != message_planes.dim(0) || attended.dim(2) != message_planes.dim(2) ||
      attended.dim(3) != message_planes.dim(3)) {
    throw ShapeError("extract_features: image " + to_string(attended.shape()) +
                     " and message planes " + to_string(message_planes.shape()) +
                     " disagree");
  }
  const Tensor parts[] = {extractor.forward(attended, mode), message_planes};
  return ops::concat_channels(parts);
}

EmbeddingNet::EmbeddingNet(const NetConfig& cfg, Rng& rng)
    : blocks_(make_stack(cfg.base_width + cfg.message_width() + cfg.channels, cfg.base_width,
                         cfg.embedder_blocks, rng)),
      out_w_(uniform_param({cfg.channels, cfg.base_width, 1, 1}, cfg.base_width, rng)),
      out_b_(filled_param({cfg.channels}, real(0))) {}

Tensor EmbeddingNet::forward(const Tensor& features, const Tensor& cover, Mode mode) {
  const Tensor parts[] = {features, cover};
  auto h = run_stack(blocks_, ops::concat_channels(parts), mode);
  auto residual = ops::conv2d(h, out_w_, out_b_, 0);
  return ops::sigmoid(ops::add(ops::logit(cover, kLogitEps), residual));
}

void EmbeddingNet::collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers) {
  collect_stack(blocks_, "embedder", params, buffers);
  params.push_back({"embedder.out.weight", &out_w_});
  params.push_back({"embedder.out.bias", &out_b_});
}

DecoderNet::DecoderNet(const NetConfig& cfg, Rng& rng)
    : height_(cfg.height),
      width_(cfg.width),
      blocks_(make_stack(cfg.channels, cfg.base_width, cfg.decoder_blocks, rng)),
      head_w_(uniform_param({cfg.base_width, cfg.message_width()}, cfg.base_width, rng)),
      head_b_(uniform_param({cfg.message_width()}, cfg.base_width, rng)) {}

Tensor DecoderNet::forward(const Tensor& noised, Mode mode) {
  if (noised.rank() != 4 || noised.dim(2) != height_ || noised.dim(3) != width_) {
    throw ShapeError("decoder expects images of " + std::to_string(height_) + "x" +
                     std::to_string(width_) + ", got " + to_string(noised.shape()));
  }
  auto pooled = ops::global_avg_pool(run_stack(blocks_, noised, mode));
  return ops::linear(pooled, head_w_, head_b_);
}

void DecoderNet::collect(std::vector<NamedTensor>& params, std::vector<NamedBuffer>& buffers) {
  collect_stack(blocks_, "decoder", params, buffers);
  params.push_back({"decoder.head.weight", &head_w_});
  params.push_back({"decoder.head.bias", &head_b_});
}

Discriminator::Discriminator(const NetConfig& cfg, Rng& rng)
    : blocks_(make_stack(cfg.channels, cfg.base_width, cfg.discriminator_blocks, rng)),
      head_w_(uniform_param({cfg.base_width, 1}, cfg.base_width, rng)),
      head_b_(uniform_param({1}, cfg.base_width, rng)) {}

Tensor Discriminator::forward(const Tensor& images, Mode mode) {
  auto pooled = ops::global_avg_pool(run_stack(blocks_, images, mode));
  auto prob = ops::sigmoid(ops::linear(pooled, head_w_, head_b_));
  return ops::clamp(prob, kProbEps, real(1) - kProbEps);
}

void Discriminator::collect(std::vector<NamedTensor>& params,
                            std::vector<NamedBuffer>& buffers) {
  collect_stack(blocks_, "discriminator", params, buffers);
  params.push_back({"discriminator.head.weight", &head_w_});
  params.push_back({"discriminator.head.bias", &head_b_});
}

}  // namespace iga
