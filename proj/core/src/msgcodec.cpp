// SPDX-License-Identifier: Apache-2.0
#include "iga/msgcodec.hpp"

#include <cmath>

#include "iga/ops.hpp"

namespace iga {

BitMessage::BitMessage(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  if (bits_.empty()) throw std::invalid_argument("message must have at least one bit");
  for (auto b : bits_) {
    if (b > 1) throw std::invalid_argument("message bits must be 0 or 1");
  }
}

std::string BitMessage::to_string() const {
  std::string s;
  s.reserve(bits_.size());
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

BitMessage BitMessage::from_string(std::string_view bits) {
  std::vector<std::uint8_t> out;
  out.reserve(bits.size());
  for (char ch : bits) {
    if (ch != '0' && ch != '1') {
      throw std::invalid_argument(std::string("invalid bit character '") + ch + "'");
    }
    out.push_back(ch == '1');
  }
  return BitMessage(std::move(out));
}

BitMessage BitMessage::from_hex(std::string_view hex, std::size_t bit_length) {
  if (hex.size() * 4 < bit_length) {
    throw std::invalid_argument("hex string has fewer than " + std::to_string(bit_length) +
                                " bits");
  }
  std::vector<std::uint8_t> out;
  for (char ch : hex) {
    int v;
    if (ch >= '0' && ch <= '9') v = ch - '0';
    else if (ch >= 'a' && ch <= 'f') v = ch - 'a' + 10;
    else if (ch >= 'A' && ch <= 'F') v = ch - 'A' + 10;
    else throw std::invalid_argument(std::string("invalid hex digit '") + ch + "'");
    for (int b = 3; b >= 0; --b) out.push_back(static_cast<std::uint8_t>((v >> b) & 1));
  }
  out.resize(bit_length);
  return BitMessage(std::move(out));
}

BitMessage BitMessage::binarize(std::span<const real> values) {
  std::vector<std::uint8_t> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] >= real(0.5);
  return BitMessage(std::move(out));
}

Tensor stack_messages(std::span<const BitMessage> messages) {
  if (messages.empty()) throw ShapeError("no messages to stack");
  const std::size_t k = messages.front().size();
  std::vector<real> data;
  data.reserve(messages.size() * k);
  for (const auto& m : messages) {
    if (m.size() != k) throw ShapeError("messages of differing length in one batch");
    for (auto b : m.bits()) data.push_back(static_cast<real>(b));
  }
  return Tensor(Shape{messages.size(), k}, std::move(data));
}

namespace {

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<real> v(numel(shape));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
  return Tensor::variable(std::move(shape), std::move(v));
}

Tensor zero_param(Shape shape) { return Tensor::variable(shape, std::vector<real>(numel(shape))); }

void check_dims(std::size_t k, std::size_t l) {
  if (k == 0 || l == 0) throw std::invalid_argument("message dimensions must be positive");
  if (l >= k) {
    throw std::invalid_argument("compressed length l=" + std::to_string(l) +
                                " must be smaller than k=" + std::to_string(k));
  }
}

}  // namespace

MsgCodecParams MsgCodecParams::init(std::size_t k, std::size_t l, std::size_t hidden, Rng& rng) {
  check_dims(k, l);
  if (hidden == 0) hidden = 2 * k;
  MsgCodecParams p;
  p.k = k;
  p.l = l;
  p.hidden = hidden;
  p.enc_w1 = uniform_param({k, hidden}, k, rng);
  p.enc_b1 = uniform_param({hidden}, k, rng);
  p.enc_w2 = uniform_param({hidden, l}, hidden, rng);
  p.enc_b2 = uniform_param({l}, hidden, rng);
  p.dec_w1 = uniform_param({l, hidden}, l, rng);
  p.dec_b1 = uniform_param({hidden}, l, rng);
  p.dec_w2 = uniform_param({hidden, k}, hidden, rng);
  p.dec_b2 = uniform_param({k}, hidden, rng);
  return p;
}

MsgCodecParams MsgCodecParams::zeros(std::size_t k, std::size_t l, std::size_t hidden) {
  check_dims(k, l);
  if (hidden == 0) hidden = 2 * k;
  MsgCodecParams p;
  p.k = k;
  p.l = l;
  p.hidden = hidden;
  p.enc_w1 = zero_param({k, hidden});
  p.enc_b1 = zero_param({hidden});
  p.enc_w2 = zero_param({hidden, l});
  p.enc_b2 = zero_param({l});
  p.dec_w1 = zero_param({l, hidden});
  p.dec_b1 = zero_param({hidden});
  p.dec_w2 = zero_param({hidden, k});
  p.dec_b2 = zero_param({k});
  return p;
}

std::vector<Tensor*> MsgCodecParams::encoder_params() { return {&enc_w1, &enc_b1, &enc_w2, &enc_b2}; }

std::vector<Tensor*> MsgCodecParams::decoder_params() { return {&dec_w1, &dec_b1, &dec_w2, &dec_b2}; }

Tensor encode_message(const Tensor& bits, const MsgCodecParams& p) {
  if (bits.rank() != 2 || bits.dim(1) != p.k) {
    throw ShapeError("encode_message: expected [N, " + std::to_string(p.k) + "], got " +
                     to_string(bits.shape()));
  }
  auto z1 = ops::relu(ops::linear(bits, p.enc_w1, p.enc_b1));
  return ops::sigmoid(ops::linear(z1, p.enc_w2, p.enc_b2));
}

Tensor decode_message(const Tensor& decoded, const MsgCodecParams& p) {
  if (decoded.rank() != 2 || decoded.dim(1) != p.l) {
    throw ShapeError("decode_message: expected [N, " + std::to_string(p.l) + "], got " +
                     to_string(decoded.shape()));
  }
  auto h1 = ops::relu(ops::linear(decoded, p.dec_w1, p.dec_b1));
  return ops::sigmoid(ops::linear(h1, p.dec_w2, p.dec_b2));
}

MessageLosses message_losses(const Tensor& message, const Tensor& recovered,
                             const Tensor& encoded, const Tensor& decoded, real lambda_mr,
                             real lambda_md) {
  return {ops::scale(ops::mse(message, recovered), lambda_mr),
          ops::scale(ops::mse(encoded, decoded), lambda_md)};
}

}  // namespace iga
