// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode gradients against central finite differences (double build).
#include <doctest.h>

#include "iga/attention.hpp"
#include "iga/distortions.hpp"
#include "iga/msgcodec.hpp"
#include "iga/nets.hpp"
#include "iga/ops.hpp"
#include "iga/pipeline.hpp"
#include "iga/train.hpp"
#include "support/gradcheck.hpp"

using namespace iga;
using iga::testing::grad_check;
using iga::testing::random_values;

static_assert(sizeof(real) == 8, "gradient checks require the double-precision build");

TEST_SUITE_BEGIN("gradients");

namespace {

constexpr double kTol = 1e-4;
// Deep ReLU stacks: a smaller step keeps activations from crossing a kink
// between the +h and -h evaluations.
constexpr double kNetStep = 1e-7;

Tensor var(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  const auto n = numel(s);
  return Tensor::variable(std::move(s), random_values(n, seed, lo, hi));
}

void expect_ok(const iga::testing::GradCheckResult& r) {
  INFO("worst: " << r.worst);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error <= kTol);
}

// Random fixed linear read-out so that elementwise ops get non-uniform
// upstream gradients.
Tensor readout(const Tensor& y, std::uint64_t seed = 99) {
  Tensor w(y.shape(), random_values(y.size(), seed));
  return ops::sum(ops::mul(y, w));
}

}  // namespace

TEST_CASE("grad of sum(x^2) is 2x") {
  auto x = Tensor::variable({2}, {1, 2});
  auto g = grad(ops::sum(ops::square(x)), x);
  CHECK(g[0] == 2.0);
  CHECK(g[1] == 4.0);
}

TEST_CASE("grad of a constant objective is zero") {
  auto x = var({5}, 1);
  auto c = Tensor::scalar(3.0);
  auto g = grad(c, x);
  for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("grad errors") {
  auto x = var({3}, 2);
  Tensor plain({3}, 1.0);
  CHECK_THROWS_AS(grad(ops::sum(ops::mul(x, plain)), plain), GradError);
  CHECK_THROWS_AS(grad(ops::mul(x, x), x), GradError);
  try {
    grad(ops::sum(plain), plain);
  } catch (const GradError& e) {
    CHECK(std::string(e.what()).find("detached input") != std::string::npos);
  }
}

TEST_CASE("detach semantics") {
  auto x = var({4}, 3);
  auto y = var({4}, 4);
  auto d = detach(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(d[i] == x[i]);
  auto obj = ops::sum(ops::mul(d, y));
  auto gx = grad(obj, x);
  for (double v : gx.data()) CHECK(v == 0.0);
  auto gy = grad(ops::sum(ops::mul(detach(x), y)), y);
  for (std::size_t i = 0; i < 4; ++i) CHECK(gy[i] == x[i]);
}

TEST_CASE("mse over 100 random doubles matches finite differences") {
  auto x = var({100}, 5);
  auto y = var({100}, 6);
  expect_ok(grad_check([&] { return ops::mse(x, y); }, {&x, &y}, 1e-5, 1e-2, 100));
}

TEST_CASE("elementwise and reduction ops") {
  auto a = var({2, 3, 4}, 10);
  auto b = var({2, 3, 4}, 11);
  auto m = var({2, 3, 4}, 12, 0, 1);
  auto pos = var({2, 3, 4}, 13, 0.2, 2.0);
  auto unit = var({2, 3, 4}, 14, 0.05, 0.95);
  SUBCASE("add") { expect_ok(grad_check([&] { return readout(ops::add(a, b)); }, {&a, &b})); }
  SUBCASE("sub") { expect_ok(grad_check([&] { return readout(ops::sub(a, b)); }, {&a, &b})); }
  SUBCASE("mul") { expect_ok(grad_check([&] { return readout(ops::mul(a, b)); }, {&a, &b})); }
  SUBCASE("blend") {
    expect_ok(grad_check([&] { return readout(ops::blend(a, b, m)); }, {&a, &b, &m}));
  }
  SUBCASE("scale/add_scalar") {
    expect_ok(grad_check([&] { return readout(ops::add_scalar(ops::scale(a, 1.7), 0.3)); }, {&a}));
  }
  SUBCASE("relu") { expect_ok(grad_check([&] { return readout(ops::relu(a)); }, {&a})); }
  SUBCASE("sigmoid") { expect_ok(grad_check([&] { return readout(ops::sigmoid(a)); }, {&a})); }
  SUBCASE("log") { expect_ok(grad_check([&] { return readout(ops::log(pos)); }, {&pos})); }
  SUBCASE("square") { expect_ok(grad_check([&] { return readout(ops::square(a)); }, {&a})); }
  SUBCASE("clamp") { expect_ok(grad_check([&] { return readout(ops::clamp(a, -0.5, 0.5)); }, {&a})); }
  SUBCASE("logit") { expect_ok(grad_check([&] { return readout(ops::logit(unit, 1e-3)); }, {&unit})); }
  SUBCASE("sum/mean") {
    expect_ok(grad_check([&] { return ops::add(ops::sum(ops::square(a)), ops::mean(b)); }, {&a, &b}));
  }
  SUBCASE("add_all") {
    expect_ok(grad_check(
        [&] {
          const Tensor t[] = {ops::mean(ops::square(a)), ops::sum(b), ops::mse(a, b)};
          return ops::add_all(t);
        },
        {&a, &b}));
  }
  SUBCASE("reshape") {
    expect_ok(grad_check([&] { return readout(ops::reshape(a, {6, 4})); }, {&a}));
  }
}

TEST_CASE("matmul and linear") {
  auto x = var({3, 5}, 20);
  auto w = var({5, 4}, 21);
  auto b = var({4}, 22);
  expect_ok(grad_check([&] { return readout(ops::matmul(x, w)); }, {&x, &w}));
  expect_ok(grad_check([&] { return readout(ops::linear(x, w, b)); }, {&x, &w, &b}));
}

TEST_CASE("conv2d") {
  auto x = var({2, 3, 6, 5}, 30);
  SUBCASE("3x3 pad 1 with bias") {
    auto w = var({4, 3, 3, 3}, 31);
    auto b = var({4}, 32);
    expect_ok(grad_check([&] { return readout(ops::conv2d(x, w, b, 1)); }, {&x, &w, &b}));
  }
  SUBCASE("3x3 no pad without bias") {
    auto w = var({2, 3, 3, 3}, 33);
    expect_ok(grad_check([&] { return readout(ops::conv2d(x, w, Tensor(Shape{0}), 0)); }, {&x, &w}));
  }
  SUBCASE("1x1") {
    auto w = var({4, 3, 1, 1}, 34);
    auto b = var({4}, 35);
    expect_ok(grad_check([&] { return readout(ops::conv2d(x, w, b, 0)); }, {&x, &w, &b}));
  }
}

TEST_CASE("batch_norm") {
  auto x = var({3, 2, 4, 4}, 40, -2, 2);
  auto gamma = var({2}, 41, 0.5, 1.5);
  auto beta = var({2}, 42);
  ops::BatchNormState st{{0.1, -0.2}, {1.5, 0.7}};
  SUBCASE("training statistics") {
    expect_ok(grad_check([&] { return readout(ops::batch_norm(x, gamma, beta, st, true, false)); },
                         {&x, &gamma, &beta}));
  }
  SUBCASE("running statistics") {
    expect_ok(grad_check([&] { return readout(ops::batch_norm(x, gamma, beta, st, false, false)); },
                         {&x, &gamma, &beta}));
  }
}

TEST_CASE("pooling, concat, expand, separable and block maps") {
  auto x = var({2, 3, 8, 8}, 50);
  auto y = var({2, 2, 8, 8}, 51);
  auto m = var({2, 3}, 52);
  expect_ok(grad_check([&] { return readout(ops::global_avg_pool(x)); }, {&x}));
  expect_ok(grad_check(
      [&] {
        const Tensor parts[] = {x, y};
        return readout(ops::concat_channels(parts));
      },
      {&x, &y}));
  expect_ok(grad_check([&] { return readout(ops::expand_spatial(m, 4, 3)); }, {&m}));
  const auto ph = random_values(6 * 8, 53);
  const auto pw = random_values(5 * 8, 54);
  expect_ok(grad_check([&] { return readout(ops::separable_map(x, ph, 6, pw, 5)); }, {&x}));
  const std::vector<real> ops3[] = {random_values(64 * 64, 55), random_values(64 * 64, 56),
                                    random_values(64 * 64, 57)};
  expect_ok(grad_check([&] { return readout(ops::block_map8(x, ops3)); }, {&x}));
}

TEST_CASE("message codec parameters and losses") {
  Rng rng(60);
  auto p = MsgCodecParams::init(12, 5, 0, rng);
  auto bits = Tensor({3, 12}, random_values(36, 61, 0, 1));
  for (auto& v : bits.mutable_data()) v = v >= 0.5 ? 1 : 0;
  std::vector<Tensor*> params = p.encoder_params();
  for (auto* t : p.decoder_params()) params.push_back(t);
  SUBCASE("encoder output") {
    expect_ok(grad_check([&] { return readout(encode_message(bits, p)); }, p.encoder_params()));
  }
  SUBCASE("decoder output") {
    auto m_de = var({3, 5}, 62);
    auto wrt = p.decoder_params();
    wrt.push_back(&m_de);
    expect_ok(grad_check([&] { return readout(decode_message(m_de, p)); }, wrt));
  }
  SUBCASE("losses through a codec round trip") {
    auto noise = var({3, 5}, 63, -0.2, 0.2);
    auto f = [&] {
      auto m_en = encode_message(bits, p);
      auto m_de = ops::add(m_en, noise);
      auto m_out = decode_message(m_de, p);
      auto l = message_losses(bits, m_out, m_en, m_de, 1.0, 0.5);
      return ops::add(l.reconstruction, l.decoding);
    };
    params.push_back(&noise);
    expect_ok(grad_check(f, params));
  }
}

TEST_CASE("attention application and message expansion") {
  auto cover = var({2, 3, 5, 5}, 70, 0, 1);
  Tensor mvals({2, 3, 5, 5}, random_values(150, 71, 0, 1));
  AttentionMask mask{mvals, MaskSource::iga};
  expect_ok(grad_check([&] { return readout(apply_attention(cover, mask)); }, {&cover}));
  auto m_en = var({2, 4}, 72, 0, 1);
  expect_ok(grad_check([&] { return readout(expand_message(m_en, 3, 2)); }, {&m_en}));
}

TEST_CASE("distortions in training mode") {
  auto enc = var({2, 3, 8, 8}, 80, 0.3, 0.7);
  auto cov = var({2, 3, 8, 8}, 81, 0.3, 0.7);
  for (const char* text : {"identity", "crop:p=0.4", "cropout:pc=0.4", "dropout:pd=0.4",
                           "resize:z=0.7", "resize:z=0.5", "jpeg:q=50", "jpeg:q=90"}) {
    CAPTURE(text);
    Rng rng(82);
    auto draw = draw_distortion(DistortionSpec::parse(text), enc.shape(), rng);
    expect_ok(grad_check(
        [&] { return readout(apply_distortion(draw, enc, cov, JpegMode::train_approx)); },
        {&enc, &cov}));
  }
}

TEST_CASE("image and adversarial losses") {
  auto cover = var({2, 3, 4, 4}, 90, 0, 1);
  auto enc = var({2, 3, 4, 4}, 91, 0, 1);
  expect_ok(grad_check([&] { return image_loss(cover, enc, 0.7); }, {&cover, &enc}));
  auto pc = var({4, 1}, 92, 0.1, 0.9);
  auto pe = var({4, 1}, 93, 0.1, 0.9);
  LossWeights w;
  expect_ok(grad_check([&] { return adversarial_losses(pc, pe, w).discriminator; }, {&pc, &pe}));
  expect_ok(grad_check([&] { return adversarial_losses(pc, pe, w).generator; }, {&pe}, 1e-5, 1e-3));
}

namespace {

NetConfig mini_config(bool codec) {
  NetConfig c;
  c.height = c.width = 16;
  c.base_width = 4;
  c.extractor_blocks = 2;
  c.embedder_blocks = 2;
  c.decoder_blocks = 2;
  c.discriminator_blocks = 2;
  c.k = 6;
  c.l = 4;
  c.use_msgcodec = codec;
  return c;
}

std::vector<Tensor*> pointers(std::vector<NamedTensor> params) {
  std::vector<Tensor*> out;
  for (auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace

TEST_CASE("networks on a 16x16 configuration") {
  auto model = Model::create(mini_config(true), 100);
  auto cover = var({2, 3, 16, 16}, 101, 0.1, 0.9);
  SUBCASE("feature extractor") {
    auto planes = var({2, 4, 16, 16}, 102, 0, 1);
    std::vector<NamedTensor> params;
    std::vector<NamedBuffer> bufs;
    model.extractor.collect(params, bufs);
    auto wrt = pointers(params);
    wrt.push_back(&cover);
    wrt.push_back(&planes);
    expect_ok(grad_check(
        [&] { return readout(extract_features(model.extractor, cover, planes, Mode::train(false))); },
        wrt, kNetStep));
  }
  SUBCASE("embedding network") {
    auto feats = var({2, 4 + 4, 16, 16}, 103);
    std::vector<NamedTensor> params;
    std::vector<NamedBuffer> bufs;
    model.embedder.collect(params, bufs);
    auto wrt = pointers(params);
    wrt.push_back(&feats);
    wrt.push_back(&cover);
    expect_ok(grad_check([&] { return readout(model.embedder.forward(feats, cover, Mode::train(false))); },
                         wrt, kNetStep));
  }
  SUBCASE("decoder network") {
    std::vector<NamedTensor> params;
    std::vector<NamedBuffer> bufs;
    model.decoder.collect(params, bufs);
    auto wrt = pointers(params);
    wrt.push_back(&cover);
    expect_ok(grad_check([&] { return readout(model.decoder.forward(cover, Mode::train(false))); }, wrt, kNetStep));
  }
  SUBCASE("discriminator") {
    auto wrt = pointers(model.discriminator_params());
    wrt.push_back(&cover);
    expect_ok(grad_check(
        [&] { return readout(model.discriminator.forward(cover, Mode::train(false))); }, wrt, kNetStep));
  }
  SUBCASE("eval mode decoder") {
    expect_ok(grad_check([&] { return readout(model.decoder.forward(cover, Mode::eval())); }, {&cover}, kNetStep));
  }
}

TEST_CASE("full generator objective with an attention mask") {
  for (bool codec : {true, false}) {
    CAPTURE(codec);
    auto model = Model::create(mini_config(codec), 110);
    auto cover = var({2, 3, 16, 16}, 111, 0.1, 0.9);
    Tensor bits({2, 6}, {1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0});
    Rng rng(112);
    auto draw = draw_distortion(DistortionSpec::parse("jpeg:q=60"), cover.shape(), rng);
    auto mask = compute_mask(model, cover, bits, {}, &draw, JpegMode::train_approx, Mode::train(false));
    auto f = [&] {
      auto out = run_pipeline(model, cover, bits, mask, &draw, JpegMode::train_approx, Mode::train(false));
      auto l_mr = ops::mse(bits, out.recovered);
      return ops::add(l_mr, image_loss(cover, out.encoded, 0.7));
    };
    expect_ok(grad_check(f, pointers(model.generator_params()), kNetStep, 1e-2, 16));
  }
}

TEST_SUITE_END();
