// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "iga/checkpoint.hpp"
#include "iga/train.hpp"
#include "support/synthetic.hpp"

using namespace iga;
namespace fs = std::filesystem;

namespace {

NetConfig mini(bool codec = true) {
  NetConfig c;
  c.height = c.width = 16;
  c.base_width = 8;
  c.extractor_blocks = 2;
  c.embedder_blocks = 1;
  c.decoder_blocks = 2;
  c.discriminator_blocks = 1;
  c.k = 6;
  c.l = 4;
  c.use_msgcodec = codec;
  return c;
}

TrainConfig small_train(const char* channel = "identity") {
  TrainConfig t;
  t.batch_size = 4;
  t.epochs = 2;
  t.channel = ChannelConfig::parse(channel);
  t.seed = 21;
  return t;
}

std::vector<BitMessage> messages(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BitMessage> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_message(k, rng));
  return out;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("iga_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("default loss weights") {
  LossWeights w;
  CHECK(w.message_reconstruction == real(1.0));
  CHECK(w.message_decoding == real(0.001));
  CHECK(w.image == real(0.7));
  CHECK(w.discriminator == real(1.0));
  CHECK(w.generator == real(0.001));
  w.image = -1;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  TrainConfig t;
  CHECK(t.batch_size == 32);
  CHECK(t.learning_rate == 1e-3);
  CHECK(t.clip_norm == 5.0);
}

TEST_CASE("image loss") {
  Tensor a({1, 3, 4, 4}, real(0.3));
  CHECK(image_loss(a, a, real(0.7)).item() == 0);
  Tensor b({1, 3, 4, 4}, real(0.4));
  CHECK(image_loss(a, b, real(0.7)).item() == doctest::Approx(0.007));
  CHECK_THROWS_AS(image_loss(a, Tensor({1, 3, 4, 5}), 1), ShapeError);
}

TEST_CASE("adversarial losses") {
  LossWeights w;
  Tensor half({4, 1}, real(0.5));
  auto eq = adversarial_losses(half, half, w);
  CHECK(eq.discriminator.item() == doctest::Approx(-2 * std::log(0.5)));
  CHECK(eq.generator.item() == doctest::Approx(0.001 * std::log(0.5)));
  Tensor near_one({4, 1}, real(1 - 1e-6)), near_zero({4, 1}, real(1e-6));
  CHECK(adversarial_losses(near_one, near_zero, w).discriminator.item() < 1e-5);
}

TEST_CASE("generator objective equals the weighted parts") {
  auto state = make_train_state(mini(), small_train("combined"));
  auto data = iga::testing::synthetic_dataset(4, 16, 16, 1);
  for (int i = 0; i < 3; ++i) {
    auto r = train_step(state, data.images, messages(4, 6, 2 + i));
    const double parts = r.message_reconstruction + r.message_decoding + r.image + r.generator_adversarial;
    CHECK(r.generator_total == doctest::Approx(parts).epsilon(1e-5));
    CHECK(std::isfinite(r.discriminator));
  }
}

TEST_CASE("discriminator loss does not reach the generator") {
  auto cfg = small_train();
  cfg.weights = {0, 0, 0, 1, 0};
  auto state = make_train_state(mini(), cfg);
  auto before_gen = state.model.generator_params();
  std::vector<std::vector<real>> gen0, disc0;
  for (auto& p : before_gen) gen0.push_back(values(*p.tensor));
  for (auto& p : state.model.discriminator_params()) disc0.push_back(values(*p.tensor));
  auto data = iga::testing::synthetic_dataset(4, 16, 16, 3);
  train_step(state, data.images, messages(4, 6, 4));
  auto gen = state.model.generator_params();
  for (std::size_t i = 0; i < gen.size(); ++i) CHECK(values(*gen[i].tensor) == gen0[i]);
  bool moved = false;
  auto disc = state.model.discriminator_params();
  for (std::size_t i = 0; i < disc.size(); ++i) moved |= values(*disc[i].tensor) != disc0[i];
  CHECK(moved);
  CHECK(state.generator_opt.steps == 1);
  CHECK(state.discriminator_opt.steps == 1);
}

TEST_CASE("ones mask disables attention") {
  auto cfg = small_train();
  cfg.mask = MaskSource::ones;
  CHECK_FALSE(cfg.use_attention());
  auto model = Model::create(mini(false), 4);
  auto data = iga::testing::synthetic_dataset(2, 16, 16, 5);
  auto cover = stack_images(data.images);
  auto m = compute_mask(model, cover, stack_messages(messages(2, 6, 6)), cfg.mask_settings(),
                        nullptr, JpegMode::train_approx, Mode::train(false));
  for (real v : m.values.data()) CHECK(v == 1);
  auto iga = compute_mask(model, cover, stack_messages(messages(2, 6, 6)), {MaskSource::iga},
                          nullptr, JpegMode::train_approx, Mode::train(false));
  double lo = 1;
  for (real v : iga.values.data()) {
    CHECK(v >= 0);
    CHECK(v <= 1);
    lo = std::min<double>(lo, v);
  }
  CHECK(lo == 0);
}

TEST_CASE("train_step is bit-reproducible") {
  auto data = iga::testing::synthetic_dataset(4, 16, 16, 7);
  auto a = make_train_state(mini(), small_train("combined"));
  auto b = make_train_state(mini(), small_train("combined"));
  for (int i = 0; i < 3; ++i) {
    auto ms = messages(4, 6, 8 + i);
    auto ra = train_step(a, data.images, ms);
    auto rb = train_step(b, data.images, ms);
    CHECK(ra.generator_total == rb.generator_total);
    CHECK(ra.discriminator == rb.discriminator);
    CHECK(ra.distortion == rb.distortion);
  }
  auto pa = a.model.generator_params();
  auto pb = b.model.generator_params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(values(*pa[i].tensor) == values(*pb[i].tensor));
}

TEST_CASE("message loss falls on a 10-image overfit set") {
  auto cfg = small_train();
  cfg.batch_size = 10;
  auto state = make_train_state(mini(), cfg);
  auto data = iga::testing::synthetic_dataset(10, 16, 16, 9);
  auto ms = messages(10, 6, 10);
  double first = 0, last = 0;
  for (int i = 0; i < 100; ++i) {
    auto r = train_step(state, data.images, ms);
    if (i < 10) first += r.generator_total;
    if (i >= 90) last += r.generator_total;
  }
  CHECK(last < first);
}

TEST_CASE("fit checkpoints and keeps the best model") {
  auto dir = temp_dir("fit");
  auto state = make_train_state(mini(), small_train());
  auto train = iga::testing::synthetic_dataset(8, 16, 16, 11);
  auto val = iga::testing::synthetic_dataset(4, 16, 16, 12);
  std::vector<EpochLog> logs;
  FitOptions opts;
  opts.checkpoint_dir = dir;
  opts.on_epoch = [&](const EpochLog& e) { logs.push_back(e); };
  auto best = fit(state, train, val, opts);
  CHECK(logs.size() == 2);
  CHECK(logs[0].best);
  CHECK(best == dir / "best.ckpt");
  CHECK(fs::exists(dir / "last.ckpt"));
  CHECK(fs::exists(best));
  CHECK(state.epoch == 2);
  CHECK_THROWS_AS(fit(state, Dataset{}, val, {}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip reproduces forward outputs exactly") {
  auto dir = temp_dir("ckpt");
  for (bool codec : {true, false}) {
    auto cfg = small_train("combined");
    cfg.mask = codec ? MaskSource::iga : MaskSource::sobel;
    auto state = make_train_state(mini(codec), cfg);
    auto data = iga::testing::synthetic_dataset(4, 16, 16, 13);
    train_step(state, data.images, messages(4, 6, 14));
    state.epoch = 1;
    const auto path = dir / (codec ? "a.ckpt" : "b.ckpt");
    save_checkpoint(path, state);
    auto loaded = load_checkpoint(path);
    CHECK(loaded.model.config.use_msgcodec == codec);
    CHECK(loaded.config.mask == cfg.mask);
    CHECK(loaded.config.channel.to_string() == cfg.channel.to_string());
    CHECK(loaded.epoch == 1);
    CHECK(loaded.step == state.step);
    CHECK(checkpoint_config(loaded) == checkpoint_config(state));

    auto cover = stack_images(data.images);
    auto bits = stack_messages(messages(4, 6, 15));
    auto e1 = embed_batch(state.model, cover, bits, state.config.mask_settings());
    auto e2 = embed_batch(loaded.model, cover, bits, loaded.config.mask_settings());
    CHECK(values(e1) == values(e2));
    CHECK(values(extract_batch(state.model, e1)) == values(extract_batch(loaded.model, e2)));
    // Training continues identically.
    auto r1 = train_step(state, data.images, messages(4, 6, 16));
    auto r2 = train_step(loaded, data.images, messages(4, 6, 16));
    CHECK(r1.generator_total == r2.generator_total);
  }
}

TEST_CASE("checkpoint rejects damaged files") {
  auto dir = temp_dir("ckpt_bad");
  auto state = make_train_state(mini(), small_train());
  const auto path = dir / "m.ckpt";
  save_checkpoint(path, state);
  const auto size = fs::file_size(path);
  std::string bytes(size, '\0');
  {
    std::ifstream f(path, std::ios::binary);
    f.read(bytes.data(), static_cast<std::streamsize>(size));
  }
  auto write = [&](const fs::path& p, const std::string& b) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  write(dir / "trunc.ckpt", bytes.substr(0, size / 2));
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "trunc.ckpt"), doctest::Contains("truncated"), CheckpointError);
  auto flipped = bytes;
  flipped[size / 2] = static_cast<char>(flipped[size / 2] ^ 0x40);
  write(dir / "flip.ckpt", flipped);
  CHECK_THROWS_AS(load_checkpoint(dir / "flip.ckpt"), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  write(dir / "magic.ckpt", magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
  auto version = bytes;
  version[8] = static_cast<char>(kCheckpointVersion + 1);
  write(dir / "version.ckpt", version);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "version.ckpt"), doctest::Contains("version"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}
