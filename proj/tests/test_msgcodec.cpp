// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "iga/dataio.hpp"
#include "iga/metrics.hpp"
#include "iga/msgcodec.hpp"
#include "iga/ops.hpp"
#include "iga/train.hpp"

using namespace iga;

namespace {

Tensor random_bits(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BitMessage> ms;
  for (std::size_t i = 0; i < n; ++i) ms.push_back(random_message(k, rng));
  return stack_messages(ms);
}

}  // namespace

TEST_CASE("BitMessage parsing and binarisation") {
  const auto m = BitMessage::from_string("0110");
  CHECK(m.size() == 4);
  CHECK(m.to_string() == "0110");
  CHECK_THROWS_AS(BitMessage::from_string("01a0"), std::invalid_argument);
  CHECK_THROWS_AS(BitMessage::from_string(""), std::invalid_argument);
  CHECK(BitMessage::from_hex("b2", 8).to_string() == "10110010");
  CHECK(BitMessage::from_hex("b2", 6).to_string() == "101100");
  CHECK_THROWS_AS(BitMessage::from_hex("b", 8), std::invalid_argument);
  CHECK_THROWS_AS(BitMessage::from_hex("zz", 8), std::invalid_argument);
  const std::vector<real> v{real(0.49), real(0.5), real(0.51), real(0)};
  CHECK(BitMessage::binarize(v).to_string() == "0110");
}

TEST_CASE("codec shapes for k=90, l=30") {
  Rng rng(3);
  auto p = MsgCodecParams::init(90, 30, 0, rng);
  CHECK(p.hidden == 180);
  auto bits = random_bits(4, 90, 1);
  auto enc = encode_message(bits, p);
  CHECK(enc.shape() == Shape{4, 30});
  for (real v : enc.data()) {
    CHECK(v > 0);
    CHECK(v < 1);
  }
  auto dec = decode_message(enc, p);
  CHECK(dec.shape() == Shape{4, 90});
  CHECK_THROWS_AS(encode_message(random_bits(2, 89, 1), p), ShapeError);
  CHECK_THROWS_AS(decode_message(Tensor({2, 29}), p), ShapeError);
  CHECK_THROWS_AS(MsgCodecParams::init(30, 30, 0, rng), std::invalid_argument);
}

TEST_CASE("zero codec outputs one half") {
  auto p = MsgCodecParams::zeros(90, 30, 0);
  const auto enc = encode_message(random_bits(3, 90, 2), p);
  const auto dec = decode_message(Tensor({3, 30}, real(0.7)), p);
  for (real v : enc.data()) CHECK(v == real(0.5));
  for (real v : dec.data()) CHECK(v == real(0.5));
}

TEST_CASE("message losses") {
  auto m = Tensor({1, 2}, {1, 0});
  auto out = Tensor({1, 2}, {real(0.5), real(0.5)});
  auto en = Tensor({1, 3}, {real(0.2), real(0.4), real(0.9)});
  auto de = Tensor({1, 3}, {real(0.2), real(0.4), real(0.6)});
  auto zero = message_losses(m, m, en, en, 1, real(0.001));
  CHECK(zero.reconstruction.item() == 0);
  CHECK(zero.decoding.item() == 0);
  auto l = message_losses(m, out, en, de, 1, real(0.001));
  CHECK(l.reconstruction.item() == doctest::Approx(0.25));
  CHECK(l.decoding.item() == doctest::Approx(0.001 * 0.09 / 3));
  LossWeights w;
  CHECK(w.message_reconstruction == real(1.0));
  CHECK(w.message_decoding == real(0.001));
}

TEST_CASE("codec alone learns a toy round trip") {
  // k=8, l=7: the smallest compression that fits this test's step budget.
  const std::size_t k = 8, l = 7;
  Rng rng(1);
  auto p = MsgCodecParams::init(k, l, 64, rng);
  std::vector<NamedTensor> params;
  for (auto* t : p.encoder_params()) params.push_back({"enc", t});
  for (auto* t : p.decoder_params()) params.push_back({"dec", t});
  for (auto& q : params) q.tensor->set_requires_grad(true);
  AdamState state;
  Rng data(2);
  for (int step = 0; step < 3000; ++step) {
    std::vector<BitMessage> ms;
    for (int b = 0; b < 64; ++b) ms.push_back(random_message(k, data));
    auto bits = stack_messages(ms);
    auto loss = ops::mse(bits, decode_message(encode_message(bits, p), p));
    std::vector<Tensor> ts;
    for (auto& q : params) ts.push_back(*q.tensor);
    adam_step(params, grad(loss, ts), state, {3e-3}, 5.0);
  }
  Rng eval(99);
  std::vector<BitMessage> ms;
  for (int b = 0; b < 1000; ++b) ms.push_back(random_message(k, eval));
  auto out = decode_message(encode_message(stack_messages(ms), p), p);
  double acc = 0;
  for (std::size_t b = 0; b < ms.size(); ++b) {
    acc += bpa(ms[b], BitMessage::binarize(out.data().subspan(b * k, k)));
  }
  acc /= static_cast<double>(ms.size());
  CHECK(acc >= 0.99);
}
