// SPDX-License-Identifier: Apache-2.0
#include "iga/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace iga {

double bpa(const BitMessage& in, const BitMessage& out) {
  if (in.size() != out.size()) {
    throw std::invalid_argument("bpa: message lengths differ (" + std::to_string(in.size()) +
                                " vs " + std::to_string(out.size()) + ")");
  }
  if (in.size() == 0) throw std::invalid_argument("bpa: empty message");
  std::size_t same = 0;
  for (std::size_t i = 0; i < in.size(); ++i) same += in[i] == out[i];
  return static_cast<double>(same) / static_cast<double>(in.size());
}

double psnr(std::span<const real> x, std::span<const real> y) {
  if (x.size() != y.size() || x.empty()) {
    throw std::invalid_argument("psnr: images must be non-empty and equally sized");
  }
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("psnr: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  return psnr(x.data(), y.data());
}

double rs_bpp(std::size_t k, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("rs_bpp: p=" + std::to_string(p) + " outside [0, 1]");
  }
  return static_cast<double>(k) * (2.0 * p - 1.0);
}

}  // namespace iga
