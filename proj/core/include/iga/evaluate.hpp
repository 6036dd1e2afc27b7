// SPDX-License-Identifier: Apache-2.0
//
// Evaluation sweeps: embed -> distort (real JPEG) -> decode -> BPA, one row
// per channel.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "iga/dataio.hpp"
#include "iga/pipeline.hpp"

namespace iga {

struct EvalRow {
  std::string name;     // distortion name, or "combined"
  std::string channel;  // full channel string with parameters
  double bpa_mean = 0;
  double bpa_std = 0;
  double psnr_mean = 0;
  double rs_bpp = 0;
  std::size_t images = 0;
  std::size_t bits = 0;
};

struct EvalReport {
  std::size_t k = 0;
  std::size_t l = 0;
  bool use_msgcodec = false;
  std::string mask;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;

  const EvalRow& row(const std::string& name) const;
  /// Fixed-width table, one row per channel.
  void write_table(std::ostream& os) const;
  /// JSON document; see README for field names.
  std::string to_json() const;
};

/// identity, crop, cropout, dropout, resize, jpeg, combined.
std::vector<ChannelConfig> default_eval_channels(const DistortionSpec& defaults = {});

EvalRow evaluate_channel(Model& model, const MaskSettings& mask, const Dataset& data,
                         const ChannelConfig& channel, std::uint64_t seed,
                         std::size_t batch_size);

/// Deterministic for a fixed seed: message i of the dataset and every
/// distortion draw derive from it.
EvalReport evaluate(Model& model, const MaskSettings& mask, const Dataset& data,
                    const std::vector<ChannelConfig>& channels, std::uint64_t seed,
                    std::size_t batch_size = 32);

}  // namespace iga
