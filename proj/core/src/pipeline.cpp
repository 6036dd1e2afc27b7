// SPDX-License-Identifier: Apache-2.0
#include "iga/pipeline.hpp"

#include "iga/ops.hpp"

namespace iga {

Model Model::create(const NetConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config = config;
  if (config.use_msgcodec) m.codec = MsgCodecParams::init(config.k, config.l, config.codec_hidden, rng);
  m.extractor = FeatureExtractor(config, rng);
  m.embedder = EmbeddingNet(config, rng);
  m.decoder = DecoderNet(config, rng);
  m.discriminator = Discriminator(config, rng);
  return m;
}

std::vector<NamedTensor> Model::generator_params() {
  std::vector<NamedTensor> params;
  std::vector<NamedBuffer> unused;
  if (config.use_msgcodec) {
    static const char* enc_names[] = {"codec.enc.w1", "codec.enc.b1", "codec.enc.w2", "codec.enc.b2"};
    static const char* dec_names[] = {"codec.dec.w1", "codec.dec.b1", "codec.dec.w2", "codec.dec.b2"};
    auto enc = codec.encoder_params();
    auto dec = codec.decoder_params();
    for (std::size_t i = 0; i < 4; ++i) params.push_back({enc_names[i], enc[i]});
    for (std::size_t i = 0; i < 4; ++i) params.push_back({dec_names[i], dec[i]});
  }
  extractor.collect(params, unused);
  embedder.collect(params, unused);
  decoder.collect(params, unused);
  return params;
}

std::vector<NamedTensor> Model::discriminator_params() {
  std::vector<NamedTensor> params;
  std::vector<NamedBuffer> unused;
  discriminator.collect(params, unused);
  return params;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedTensor> unused;
  std::vector<NamedBuffer> bufs;
  extractor.collect(unused, bufs);
  embedder.collect(unused, bufs);
  decoder.collect(unused, bufs);
  discriminator.collect(unused, bufs);
  return bufs;
}

Tensor Model::encode_message(const Tensor& bits) const {
  return config.use_msgcodec ? iga::encode_message(bits, codec) : bits;
}

Tensor Model::decode_message(const Tensor& decoded) const {
  return config.use_msgcodec ? iga::decode_message(decoded, codec) : decoded;
}

PipelineOutputs run_pipeline(Model& model, const Tensor& cover, const Tensor& bits,
                             const AttentionMask& mask, const DistortionDraw* draw,
                             JpegMode jpeg_mode, Mode mode) {
  if (cover.rank() != 4 || cover.dim(1) != model.config.channels ||
      cover.dim(2) != model.config.height || cover.dim(3) != model.config.width) {
    throw ShapeError("cover batch " + to_string(cover.shape()) + " does not match model size " +
                     std::to_string(model.config.height) + "x" + std::to_string(model.config.width));
  }
  if (bits.rank() != 2 || bits.dim(0) != cover.dim(0) || bits.dim(1) != model.config.k) {
    throw ShapeError("message batch " + to_string(bits.shape()) + " does not match k=" +
                     std::to_string(model.config.k));
  }
  PipelineOutputs out;
  out.encoded_message = model.encode_message(bits);
  auto planes = expand_message(out.encoded_message, cover.dim(2), cover.dim(3));
  auto attended = apply_attention(cover, mask);
  auto features = extract_features(model.extractor, attended, planes, mode);
  out.encoded = model.embedder.forward(features, cover, mode);
  out.noised = draw ? apply_distortion(*draw, out.encoded, cover, jpeg_mode) : out.encoded;
  out.decoded = model.decoder.forward(out.noised, mode);
  out.recovered = model.decode_message(out.decoded);
  return out;
}

AttentionMask compute_mask(Model& model, const Tensor& cover, const Tensor& bits,
                           const MaskSettings& settings, const DistortionDraw* draw,
                           JpegMode jpeg_mode, Mode mode) {
  switch (settings.source) {
    case MaskSource::ones: return ones_mask(cover.shape());
    case MaskSource::sobel: return sobel_mask(cover);
    case MaskSource::iga: break;
  }
  auto probe = cover.clone(true);
  Mode probe_mode = mode;
  probe_mode.update_stats = false;
  auto out = run_pipeline(model, probe, bits, ones_mask(cover.shape()), draw, jpeg_mode, probe_mode);
  auto loss = ops::scale(ops::mse(bits, out.recovered), settings.lambda_mr);
  return iga_mask(grad(loss, probe), settings.normalization);
}

Tensor embed_batch(Model& model, const Tensor& cover, const Tensor& bits,
                   const MaskSettings& settings) {
  auto mask = compute_mask(model, cover, bits, settings, nullptr, JpegMode::eval_real, Mode::eval());
  return detach(run_pipeline(model, cover, bits, mask, nullptr, JpegMode::eval_real, Mode::eval()).encoded);
}

Tensor extract_batch(Model& model, const Tensor& images) {
  return detach(model.decode_message(model.decoder.forward(images, Mode::eval())));
}

}  // namespace iga
