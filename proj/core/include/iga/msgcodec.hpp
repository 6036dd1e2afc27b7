// SPDX-License-Identifier: Apache-2.0
//
// Message coding: a pair of one-hidden-layer perceptrons that compress a
// k-bit message to l real values before embedding and expand the decoded l
// values back to k bit estimates.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "iga/random.hpp"
#include "iga/tensor.hpp"

namespace iga {

/// A k-bit message; every element is 0 or 1.
class BitMessage {
 public:
  BitMessage() = default;
  explicit BitMessage(std::vector<std::uint8_t> bits);

  std::size_t size() const { return bits_.size(); }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  /// "0110..." form.
  std::string to_string() const;
  static BitMessage from_string(std::string_view bits);
  /// Hex digits, most significant bit first, truncated to `bit_length`.
  static BitMessage from_hex(std::string_view hex, std::size_t bit_length);
  /// Threshold real estimates: >= 0.5 maps to 1.
  static BitMessage binarize(std::span<const real> values);

  friend bool operator==(const BitMessage&, const BitMessage&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// Stack messages into a [N, k] tensor of 0/1 values.
Tensor stack_messages(std::span<const BitMessage> messages);

struct MsgCodecParams {
  std::size_t k = 0;
  std::size_t l = 0;
  std::size_t hidden = 0;
  // encoder: k -> hidden -> l
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  // decoder: l -> hidden -> k
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases. A zero
  /// `hidden` selects the default width 2k.
  static MsgCodecParams init(std::size_t k, std::size_t l, std::size_t hidden, Rng& rng);
  static MsgCodecParams zeros(std::size_t k, std::size_t l, std::size_t hidden);

  std::vector<Tensor*> encoder_params();
  std::vector<Tensor*> decoder_params();
};

/// [N, k] bits -> [N, l] values in (0, 1).
Tensor encode_message(const Tensor& bits, const MsgCodecParams& p);
/// [N, l] decoded values -> [N, k] values in (0, 1).
Tensor decode_message(const Tensor& decoded, const MsgCodecParams& p);

struct MessageLosses {
  Tensor reconstruction;  // weighted MSE(M, M_out)
  Tensor decoding;        // weighted MSE(M_en, M_de)
};

MessageLosses message_losses(const Tensor& message, const Tensor& recovered,
                             const Tensor& encoded, const Tensor& decoded, real lambda_mr,
                             real lambda_md);

}  // namespace iga
