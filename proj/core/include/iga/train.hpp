// SPDX-License-Identifier: Apache-2.0
//
// Training: the two-pass attention protocol, the four objectives and the
// alternating discriminator / generator updates.
#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>

#include "iga/dataio.hpp"
#include "iga/pipeline.hpp"

namespace iga {

struct LossWeights {
  real message_reconstruction = real(1.0);  // lambda_MR
  real message_decoding = real(0.001);      // lambda_MD
  real image = real(0.7);                   // lambda_I
  real discriminator = real(1.0);           // lambda_D
  real generator = real(0.001);             // lambda_G

  void validate() const;
};

struct TrainConfig {
  LossWeights weights;
  ChannelConfig channel = ChannelConfig::parse("identity");
  MaskSource mask = MaskSource::iga;
  Normalization normalization = Normalization::minmax;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  bool use_attention() const { return mask != MaskSource::ones; }
  MaskSettings mask_settings() const {
    return {mask, normalization, weights.message_reconstruction};
  }
  void validate() const;
};

/// Adam moments for one parameter group.
struct AdamState {
  std::vector<std::vector<real>> first;
  std::vector<std::vector<real>> second;
  std::uint64_t steps = 0;
};

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update. Gradients are rescaled first so that their global L2
/// norm does not exceed `clip_norm` (no clipping when clip_norm <= 0).
/// Returns the pre-clipping norm.
double adam_step(std::span<const NamedTensor> params, std::span<const Tensor> grads,
                 AdamState& state, const AdamOptions& options, double clip_norm);

struct TrainState {
  Model model;
  TrainConfig config;
  AdamState generator_opt;
  AdamState discriminator_opt;
  std::size_t epoch = 0;  // completed epochs
  std::size_t step = 0;
  Rng rng;
  double best_val_bpa = -1.0;
};

TrainState make_train_state(const NetConfig& net, const TrainConfig& config);

/// lambda_I * mean((cover - encoded)^2)
Tensor image_loss(const Tensor& cover, const Tensor& encoded, real lambda_image);

struct AdversarialLosses {
  Tensor discriminator;  // -lambda_D [log D(cover) + log(1 - D(encoded))], batch mean
  Tensor generator;      // lambda_G log(1 - D(encoded)), batch mean
};

/// From discriminator probabilities of cover and encoded images (already
/// clamped away from 0 and 1).
AdversarialLosses adversarial_losses(const Tensor& prob_cover, const Tensor& prob_encoded,
                                     const LossWeights& weights);

struct LossReport {
  double message_reconstruction = 0;
  double message_decoding = 0;
  double image = 0;
  double generator_adversarial = 0;
  double discriminator = 0;
  double generator_total = 0;
  double bpa = 0;
  double psnr = 0;
  std::string distortion;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One optimisation step on a batch.
LossReport train_step(TrainState& state, std::span<const Image> covers,
                      std::span<const BitMessage> messages);

/// Mean BPA of the model on a dataset under a channel (eval mode, real JPEG).
double validation_bpa(Model& model, const TrainConfig& config, const Dataset& data,
                      std::uint64_t seed);

struct EpochLog {
  std::size_t epoch = 0;
  LossReport mean;
  double val_bpa = 0;
  bool best = false;
};

struct FitOptions {
  /// Directory receiving last.ckpt and best.ckpt after every epoch; empty
  /// disables checkpointing.
  std::filesystem::path checkpoint_dir;
  /// Called after each epoch, before its checkpoints are written.
  std::function<void(const EpochLog&)> on_epoch;
};

/// Runs epochs [state.epoch, state.config.epochs). Returns the path of the
/// best checkpoint (empty without checkpointing).
std::filesystem::path fit(TrainState& state, const Dataset& train, const Dataset& val,
                          const FitOptions& options);

}  // namespace iga
