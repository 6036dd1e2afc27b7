// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "iga/dataio.hpp"
#include "iga/metrics.hpp"
#include "iga/pipeline.hpp"
#include "support/synthetic.hpp"

using namespace iga;

namespace {

NetConfig mini(std::size_t k = 6, std::size_t l = 4) {
  NetConfig c;
  c.height = c.width = 16;
  c.base_width = 8;
  c.extractor_blocks = 2;
  c.embedder_blocks = 1;
  c.decoder_blocks = 2;
  c.discriminator_blocks = 1;
  c.k = k;
  c.l = l;
  return c;
}

Tensor covers(std::size_t n, std::size_t hw, std::uint64_t seed) {
  auto ds = iga::testing::synthetic_dataset(n, hw, hw, seed);
  return stack_images(ds.images);
}

}  // namespace

TEST_CASE("config validation") {
  NetConfig c = mini();
  CHECK_NOTHROW(c.validate());
  c.height = 20;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = mini(6, 6);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.use_msgcodec = false;
  CHECK(c.message_width() == 6);
}

TEST_CASE("feature channels are base width + l at 128x128") {
  NetConfig c;
  c.l = 30;
  c.k = 90;
  Rng rng(1);
  FeatureExtractor ex(c, rng);
  auto img = covers(1, 128, 2);
  auto planes = expand_message(Tensor({1, 30}, real(0.5)), 128, 128);
  auto f = extract_features(ex, img, planes, Mode::eval());
  CHECK(f.shape() == Shape{1, 64 + 30, 128, 128});
}

TEST_CASE("shape chain and output ranges") {
  for (bool codec : {true, false}) {
    auto cfg = mini();
    cfg.use_msgcodec = codec;
    auto model = Model::create(cfg, 3);
    auto cover = covers(3, 16, 4);
    Rng rng(5);
    std::vector<BitMessage> ms;
    for (int i = 0; i < 3; ++i) ms.push_back(random_message(cfg.k, rng));
    auto bits = stack_messages(ms);
    auto out = run_pipeline(model, cover, bits, ones_mask(cover.shape()), nullptr,
                            JpegMode::train_approx, Mode::train());
    CHECK(out.encoded_message.shape() == Shape{3, cfg.message_width()});
    CHECK(out.encoded.shape() == cover.shape());
    CHECK(out.decoded.shape() == Shape{3, cfg.message_width()});
    CHECK(out.recovered.shape() == Shape{3, cfg.k});
    for (real v : out.encoded.data()) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
    auto p = model.discriminator.forward(cover, Mode::eval());
    CHECK(p.shape() == Shape{3, 1});
    for (real v : p.data()) {
      CHECK(v > 0);
      CHECK(v < 1);
    }
    CHECK_THROWS_AS(model.decoder.forward(covers(1, 24, 1), Mode::eval()), ShapeError);
  }
}

TEST_CASE("features carry gradient to image and message") {
  auto cfg = mini();
  Rng rng(6);
  FeatureExtractor ex(cfg, rng);
  auto img = covers(2, 16, 7).clone(true);
  auto msg = Tensor::variable({2, 4}, {0.1f, 0.9f, 0.4f, 0.6f, 0.3f, 0.2f, 0.8f, 0.7f});
  auto f = extract_features(ex, img, expand_message(msg, 16, 16), Mode::train());
  Tensor w(f.shape());
  Rng wr(8);
  for (auto& v : w.mutable_data()) v = static_cast<real>(wr.uniform(-1, 1));
  auto obj = ops::sum(ops::mul(f, w));
  const Tensor wrt[] = {img, msg};
  auto g = grad(obj, wrt);
  double gi = 0, gm = 0;
  for (real v : g[0].data()) gi += std::abs(v);
  for (real v : g[1].data()) gm += std::abs(v);
  CHECK(gi > 0);
  CHECK(gm > 0);
}

TEST_CASE("eval decoding is deterministic") {
  auto model = Model::create(mini(), 9);
  auto x = covers(2, 16, 10);
  auto a = model.decoder.forward(x, Mode::eval());
  auto b = model.decoder.forward(x, Mode::eval());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("untrained pipeline decodes at chance") {
  auto cfg = mini(30, 16);
  auto model = Model::create(cfg, 11);
  auto data = iga::testing::synthetic_dataset(40, 16, 16, 12);
  Rng rng(13);
  double acc = 0;
  std::size_t bits = 0;
  for (std::size_t s = 0; s < data.size(); s += 8) {
    std::vector<Image> b(data.images.begin() + s, data.images.begin() + std::min(s + 8, data.size()));
    std::vector<BitMessage> ms;
    for (std::size_t i = 0; i < b.size(); ++i) ms.push_back(random_message(cfg.k, rng));
    auto cover = stack_images(b);
    auto enc = embed_batch(model, cover, stack_messages(ms), {});
    auto out = extract_batch(model, enc);
    for (std::size_t i = 0; i < ms.size(); ++i) {
      acc += bpa(ms[i], BitMessage::binarize(out.data().subspan(i * cfg.k, cfg.k))) * cfg.k;
      bits += cfg.k;
    }
  }
  CHECK(bits >= 1000);
  // 3 sigma of Binomial(1200, 0.5) / 1200 is about 0.043.
  CHECK(std::abs(acc / bits - 0.5) <= 0.05);
}
