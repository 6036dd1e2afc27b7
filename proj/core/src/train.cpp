// SPDX-License-Identifier: Apache-2.0
#include "iga/train.hpp"

#include <cmath>
#include <numeric>

#include "iga/checkpoint.hpp"
#include "iga/evaluate.hpp"
#include "iga/metrics.hpp"
#include "iga/ops.hpp"

namespace iga {

void LossWeights::validate() const {
  for (real w : {message_reconstruction, message_decoding, image, discriminator, generator}) {
    if (!(w >= 0)) throw std::invalid_argument("loss weights must be non-negative");
  }
}

void TrainConfig::validate() const {
  weights.validate();
  channel.validate();
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
}

double adam_step(std::span<const NamedTensor> params, std::span<const Tensor> grads,
                 AdamState& state, const AdamOptions& options, double clip_norm) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: gradient count");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.tensor->size(), real(0));
      state.second.emplace_back(p.tensor->size(), real(0));
    }
  }
  if (state.first.size() != params.size()) throw std::invalid_argument("adam_step: state size");

  double sq = 0;
  for (const auto& g : grads) {
    for (real v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  const double factor = (clip_norm > 0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++state.steps;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.steps));
  const double step = options.learning_rate / bc1;
  const auto b1 = static_cast<real>(options.beta1), b2 = static_cast<real>(options.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].tensor->mutable_data();
    const auto g = grads[i].data();
    auto& m = state.first[i];
    auto& v = state.second[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const real gj = static_cast<real>(g[j] * factor);
      m[j] = b1 * m[j] + (real(1) - b1) * gj;
      v[j] = b2 * v[j] + (real(1) - b2) * gj * gj;
      const double denom = std::sqrt(static_cast<double>(v[j]) / bc2) + options.eps;
      w[j] = static_cast<real>(w[j] - step * m[j] / denom);
    }
  }
  return norm;
}

TrainState make_train_state(const NetConfig& net, const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.model = Model::create(net, config.seed);
  s.config = config;
  s.rng = Rng(config.seed ^ 0x7261696eULL);
  return s;
}

Tensor image_loss(const Tensor& cover, const Tensor& encoded, real lambda_image) {
  return ops::scale(ops::mse(cover, encoded), lambda_image);
}

AdversarialLosses adversarial_losses(const Tensor& prob_cover, const Tensor& prob_encoded,
                                     const LossWeights& weights) {
  auto log_real = ops::mean(ops::log(prob_cover));
  auto log_fake = ops::mean(ops::log(ops::add_scalar(ops::scale(prob_encoded, real(-1)), real(1))));
  return {ops::scale(ops::add(log_real, log_fake), -weights.discriminator),
          ops::scale(log_fake, weights.generator)};
}

namespace {

std::vector<Tensor> tensors_of(std::span<const NamedTensor> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(*p.tensor);
  return out;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

LossReport train_step(TrainState& state, std::span<const Image> covers,
                      std::span<const BitMessage> messages) {
  auto& model = state.model;
  const auto& cfg = state.config;
  const auto& w = cfg.weights;
  if (covers.size() != messages.size() || covers.empty()) {
    throw std::invalid_argument("train_step: need one message per cover image");
  }
  auto cover = stack_images(covers);
  auto bits = stack_messages(messages);

  const auto spec = sample_channel(cfg.channel, state.rng);
  const auto draw = draw_distortion(spec, cover.shape(), state.rng);

  // Pass 1: mask from the reconstruction-loss gradient (all-ones attention).
  AttentionMask mask;
  try {
    mask = compute_mask(model, cover, bits, cfg.mask_settings(), &draw, JpegMode::train_approx,
                        Mode::train(false));
  } catch (const GradError&) {
    throw TrainingDiverged("diverged: non-finite attention gradients");
  }
  // Pass 2: attended embedding.
  auto out = run_pipeline(model, cover, bits, mask, &draw, JpegMode::train_approx, Mode::train(true));

  Tensor l_mr = ops::scale(ops::mse(bits, out.recovered), w.message_reconstruction);
  Tensor l_md = Tensor::scalar(0);
  if (model.config.use_msgcodec) {
    auto ml = message_losses(bits, out.recovered, out.encoded_message, out.decoded,
                             w.message_reconstruction, w.message_decoding);
    l_mr = ml.reconstruction;
    l_md = ml.decoding;
  }
  auto l_img = image_loss(cover, out.encoded, w.image);

  // Discriminator update on detached encoded images.
  auto disc_params = model.discriminator_params();
  auto d_cover = model.discriminator.forward(cover, Mode::train(true));
  auto d_fake = model.discriminator.forward(detach(out.encoded), Mode::train(true));
  auto l_disc = adversarial_losses(d_cover, d_fake, w).discriminator;
  if (!finite(l_disc.item())) throw TrainingDiverged("diverged: non-finite discriminator loss");
  {
    const auto params = tensors_of(disc_params);
    auto grads = grad(l_disc, params);
    adam_step(disc_params, grads, state.discriminator_opt, {cfg.learning_rate}, cfg.clip_norm);
  }

  // Generator-side update against the refreshed discriminator.
  auto d_enc = model.discriminator.forward(out.encoded, Mode::train(false));
  auto l_gen = adversarial_losses(d_cover, d_enc, w).generator;
  const Tensor terms[] = {l_mr, l_md, l_img, l_gen};
  auto total = ops::add_all(terms);
  if (!finite(total.item())) throw TrainingDiverged("diverged: non-finite generator loss");
  auto gen_params = model.generator_params();
  {
    const auto params = tensors_of(gen_params);
    auto grads = grad(total, params);
    adam_step(gen_params, grads, state.generator_opt, {cfg.learning_rate}, cfg.clip_norm);
  }
  ++state.step;

  LossReport r;
  r.message_reconstruction = l_mr.item();
  r.message_decoding = l_md.item();
  r.image = l_img.item();
  r.generator_adversarial = l_gen.item();
  r.discriminator = l_disc.item();
  r.generator_total = total.item();
  r.distortion = spec.to_string();
  const std::size_t k = model.config.k;
  const std::size_t per = cover.size() / cover.dim(0);
  for (std::size_t i = 0; i < messages.size(); ++i) {
    r.bpa += bpa(messages[i], BitMessage::binarize(out.recovered.data().subspan(i * k, k)));
    r.psnr += psnr(cover.data().subspan(i * per, per), out.encoded.data().subspan(i * per, per));
  }
  r.bpa /= static_cast<double>(messages.size());
  r.psnr /= static_cast<double>(messages.size());
  return r;
}

double validation_bpa(Model& model, const TrainConfig& config, const Dataset& data,
                      std::uint64_t seed) {
  return evaluate_channel(model, config.mask_settings(), data, config.channel, seed,
                          config.batch_size)
      .bpa_mean;
}

std::filesystem::path fit(TrainState& state, const Dataset& train, const Dataset& val,
                          const FitOptions& options) {
  if (train.images.empty()) throw std::invalid_argument("training dataset is empty");
  state.config.validate();
  const auto& cfg = state.config;
  const bool checkpointing = !options.checkpoint_dir.empty();
  if (checkpointing) std::filesystem::create_directories(options.checkpoint_dir);
  const auto last_path = options.checkpoint_dir / "last.ckpt";
  const auto best_path = options.checkpoint_dir / "best.ckpt";
  const Dataset& val_set = val.images.empty() ? train : val;

  while (state.epoch < cfg.epochs) {
    // Batch order and messages depend only on (seed, epoch), so runs that
    // differ in model variant still see identical data.
    Rng data_rng(cfg.seed ^ 0x6f72646572ULL ^ (0x9e3779b97f4a7c15ULL * (state.epoch + 1)));
    std::vector<std::size_t> order(train.images.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[data_rng.below(i)]);

    EpochLog log;
    log.epoch = state.epoch + 1;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, order.size());
      // Batch statistics need at least two images.
      if (end - start < 2 && order.size() >= 2) continue;
      std::vector<Image> covers;
      std::vector<BitMessage> messages;
      for (std::size_t i = start; i < end; ++i) {
        covers.push_back(train.images[order[i]]);
        messages.push_back(random_message(state.model.config.k, data_rng));
      }
      LossReport r;
      try {
        r = train_step(state, covers, messages);
      } catch (const TrainingDiverged& e) {
        throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(state.step) +
                               (checkpointing && std::filesystem::exists(last_path)
                                    ? "; last checkpoint: " + last_path.string()
                                    : std::string("; no checkpoint written")));
      }
      auto& m = log.mean;
      m.message_reconstruction += r.message_reconstruction;
      m.message_decoding += r.message_decoding;
      m.image += r.image;
      m.generator_adversarial += r.generator_adversarial;
      m.discriminator += r.discriminator;
      m.generator_total += r.generator_total;
      m.bpa += r.bpa;
      m.psnr += r.psnr;
      ++batches;
    }
    if (batches > 0) {
      auto& m = log.mean;
      const double inv = 1.0 / static_cast<double>(batches);
      m.message_reconstruction *= inv;
      m.message_decoding *= inv;
      m.image *= inv;
      m.generator_adversarial *= inv;
      m.discriminator *= inv;
      m.generator_total *= inv;
      m.bpa *= inv;
      m.psnr *= inv;
    }
    log.val_bpa = validation_bpa(state.model, cfg, val_set, cfg.seed + 1);
    state.epoch += 1;
    log.best = log.val_bpa > state.best_val_bpa;
    if (log.best) state.best_val_bpa = log.val_bpa;
    if (options.on_epoch) options.on_epoch(log);
    if (checkpointing) {
      save_checkpoint(last_path, state);
      if (log.best) save_checkpoint(best_path, state);
    }
  }
  return checkpointing ? best_path : std::filesystem::path{};
}

}  // namespace iga
