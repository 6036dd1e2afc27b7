// SPDX-License-Identifier: Apache-2.0
#include "iga/evaluate.hpp"

#include <cmath>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <ostream>

#include "iga/metrics.hpp"

namespace iga {

const EvalRow& EvalReport::row(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw std::out_of_range("no evaluation row named " + name);
}

void EvalReport::write_table(std::ostream& os) const {
  os << "k=" << k << " l=" << (use_msgcodec ? std::to_string(l) : std::string("-"))
     << " mask=" << mask << " seed=" << seed << '\n';
  os << std::left << std::setw(10) << "noise" << std::right << std::setw(10) << "BPA(%)"
     << std::setw(10) << "std" << std::setw(11) << "PSNR(dB)" << std::setw(10) << "RS-BPP"
     << std::setw(8) << "images" << "  channel\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.name << std::right << std::fixed << std::setprecision(2)
       << std::setw(10) << 100.0 * r.bpa_mean << std::setw(10) << 100.0 * r.bpa_std
       << std::setw(11) << r.psnr_mean << std::setw(10) << r.rs_bpp << std::setw(8) << r.images
       << "  " << r.channel << '\n';
  }
  os.unsetf(std::ios::floatfield);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["k"] = k;
  j["l"] = use_msgcodec ? nlohmann::ordered_json(l) : nlohmann::ordered_json(nullptr);
  j["use_msgcodec"] = use_msgcodec;
  j["mask"] = mask;
  j["seed"] = seed;
  auto& arr = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    arr.push_back({{"noise", r.name},
                   {"channel", r.channel},
                   {"bpa_mean", r.bpa_mean},
                   {"bpa_std", r.bpa_std},
                   {"psnr_mean", r.psnr_mean},
                   {"rs_bpp", r.rs_bpp},
                   {"images", r.images},
                   {"bits", r.bits}});
  }
  return j.dump(2);
}

std::vector<ChannelConfig> default_eval_channels(const DistortionSpec& defaults) {
  std::vector<ChannelConfig> out;
  for (auto kind : {DistortionKind::identity, DistortionKind::crop, DistortionKind::cropout,
                    DistortionKind::dropout, DistortionKind::resize, DistortionKind::jpeg}) {
    ChannelConfig c;
    auto s = defaults;
    s.kind = kind;
    c.specs.push_back(s);
    out.push_back(c);
  }
  out.push_back(ChannelConfig::combined(defaults));
  return out;
}

EvalRow evaluate_channel(Model& model, const MaskSettings& mask, const Dataset& data,
                         const ChannelConfig& channel, std::uint64_t seed,
                         std::size_t batch_size) {
  if (data.images.empty()) throw std::invalid_argument("evaluation dataset is empty");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  channel.validate();
  EvalRow row;
  row.name = channel.mode == SamplingMode::combined ? std::string("combined")
                                                    : std::string(to_string(channel.specs[0].kind));
  row.channel = channel.to_string();

  Rng message_rng(seed);
  Rng noise_rng(seed ^ 0xa5a5a5a5ULL);
  std::vector<double> scores;
  double psnr_sum = 0;
  for (std::size_t start = 0; start < data.images.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, data.images.size());
    std::span<const Image> covers(data.images.data() + start, end - start);
    std::vector<BitMessage> messages;
    for (std::size_t i = start; i < end; ++i) messages.push_back(random_message(model.config.k, message_rng));
    auto cover = stack_images(covers);
    auto bits = stack_messages(messages);
    auto encoded = embed_batch(model, cover, bits, mask);
    auto spec = sample_channel(channel, noise_rng);
    auto draw = draw_distortion(spec, cover.shape(), noise_rng);
    auto noised = apply_distortion(draw, encoded, cover, JpegMode::eval_real);
    auto recovered = extract_batch(model, noised);
    const std::size_t k = model.config.k;
    for (std::size_t i = 0; i < messages.size(); ++i) {
      auto out = BitMessage::binarize(recovered.data().subspan(i * k, k));
      scores.push_back(bpa(messages[i], out));
      const std::size_t per = cover.size() / cover.dim(0);
      psnr_sum += psnr(cover.data().subspan(i * per, per), encoded.data().subspan(i * per, per));
    }
  }
  const double n = static_cast<double>(scores.size());
  double mean = 0;
  for (double s : scores) mean += s;
  mean /= n;
  double var = 0;
  for (double s : scores) var += (s - mean) * (s - mean);
  row.bpa_mean = mean;
  row.bpa_std = std::sqrt(var / n);
  row.psnr_mean = psnr_sum / n;
  row.rs_bpp = rs_bpp(model.config.k, mean);
  row.images = scores.size();
  row.bits = scores.size() * model.config.k;
  return row;
}

EvalReport evaluate(Model& model, const MaskSettings& mask, const Dataset& data,
                    const std::vector<ChannelConfig>& channels, std::uint64_t seed,
                    std::size_t batch_size) {
  EvalReport report;
  report.k = model.config.k;
  report.l = model.config.l;
  report.use_msgcodec = model.config.use_msgcodec;
  report.mask = std::string(to_string(mask.source));
  report.seed = seed;
  for (const auto& ch : channels) {
    report.rows.push_back(evaluate_channel(model, mask, data, ch, seed, batch_size));
  }
  return report;
}

}  // namespace iga
