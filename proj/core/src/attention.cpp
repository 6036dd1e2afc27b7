// SPDX-License-Identifier: Apache-2.0
#include "iga/attention.hpp"

#include <algorithm>
#include <cmath>

#include "iga/ops.hpp"

namespace iga {

std::string_view to_string(MaskSource s) {
  switch (s) {
    case MaskSource::iga: return "iga";
    case MaskSource::sobel: return "sobel";
    case MaskSource::ones: return "none";
  }
  return "none";
}

MaskSource parse_mask_source(std::string_view s) {
  if (s == "iga") return MaskSource::iga;
  if (s == "sobel") return MaskSource::sobel;
  if (s == "none" || s == "ones") return MaskSource::ones;
  throw std::invalid_argument("unknown mask source '" + std::string(s) + "'");
}

std::string_view to_string(Normalization n) {
  return n == Normalization::minmax ? "minmax" : "sigmoid";
}

Normalization parse_normalization(std::string_view s) {
  if (s == "minmax") return Normalization::minmax;
  if (s == "sigmoid") return Normalization::sigmoid;
  throw std::invalid_argument("unknown normalization '" + std::string(s) + "'");
}

namespace {

// Images are the leading axis for rank-4 tensors; a rank-3 tensor is one image.
std::size_t image_count(const Tensor& t) {
  if (t.rank() == 4) return t.dim(0);
  if (t.rank() == 3) return 1;
  throw ShapeError("expected a CHW or NCHW image tensor, got " + to_string(t.shape()));
}

}  // namespace

AttentionMask iga_mask(const Tensor& grad_image, Normalization g) {
  const std::size_t n = image_count(grad_image);
  const std::size_t per = grad_image.size() / n;
  const auto gd = grad_image.data();
  for (real v : gd) {
    if (!std::isfinite(v)) throw GradError("diverged gradients");
  }
  std::vector<real> out(gd.size());
  for (std::size_t i = 0; i < n; ++i) {
    const real* src = gd.data() + i * per;
    real* dst = out.data() + i * per;
    if (g == Normalization::minmax) {
      real lo = std::abs(src[0]), hi = lo;
      for (std::size_t j = 0; j < per; ++j) {
        const real a = std::abs(src[j]);
        lo = std::min(lo, a);
        hi = std::max(hi, a);
      }
      const double range = static_cast<double>(hi) - static_cast<double>(lo);
      if (range < kDegenerateRange) {
        std::fill_n(dst, per, real(1));
        continue;
      }
      for (std::size_t j = 0; j < per; ++j) {
        const double v = (std::abs(src[j]) - lo) / (range + kDegenerateRange);
        dst[j] = static_cast<real>(std::clamp(1.0 - v, 0.0, 1.0));
      }
    } else {
      for (std::size_t j = 0; j < per; ++j) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(src[j])));
        dst[j] = static_cast<real>(1.0 - s);
      }
    }
  }
  return {Tensor(grad_image.shape(), std::move(out)), MaskSource::iga};
}

AttentionMask ones_mask(const Shape& shape) { return {Tensor(shape, real(1)), MaskSource::ones}; }

AttentionMask sobel_mask(const Tensor& cover) {
  const std::size_t n = image_count(cover);
  const std::size_t h = cover.dim(cover.rank() - 2);
  const std::size_t w = cover.dim(cover.rank() - 1);
  const std::size_t c = cover.dim(cover.rank() - 3);
  if (h < 3 || w < 3) {
    throw ShapeError("sobel_mask: image must be at least 3x3, got " + to_string(cover.shape()));
  }
  const auto x = cover.data();
  std::vector<real> out(x.size());
  auto at = [&](const real* p, std::ptrdiff_t i, std::ptrdiff_t j) {
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(h) - 1);
    j = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return static_cast<double>(p[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)]);
  };
  const std::size_t per = c * h * w;
  for (std::size_t img = 0; img < n; ++img) {
    double lo = 0, hi = 0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const real* p = x.data() + img * per + ch * h * w;
      real* q = out.data() + img * per + ch * h * w;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const auto ii = static_cast<std::ptrdiff_t>(i), jj = static_cast<std::ptrdiff_t>(j);
          const double gx = (at(p, ii - 1, jj + 1) + 2 * at(p, ii, jj + 1) + at(p, ii + 1, jj + 1)) -
                            (at(p, ii - 1, jj - 1) + 2 * at(p, ii, jj - 1) + at(p, ii + 1, jj - 1));
          const double gy = (at(p, ii + 1, jj - 1) + 2 * at(p, ii + 1, jj) + at(p, ii + 1, jj + 1)) -
                            (at(p, ii - 1, jj - 1) + 2 * at(p, ii - 1, jj) + at(p, ii - 1, jj + 1));
          const double mag = std::sqrt(gx * gx + gy * gy);
          q[i * w + j] = static_cast<real>(mag);
          if (ch == 0 && i == 0 && j == 0) lo = hi = mag;
          lo = std::min(lo, mag);
          hi = std::max(hi, mag);
        }
      }
    }
    real* q = out.data() + img * per;
    const double range = hi - lo;
    if (range < kDegenerateRange) {
      std::fill_n(q, per, real(0));
      continue;
    }
    for (std::size_t j = 0; j < per; ++j) {
      q[j] = static_cast<real>(std::clamp((q[j] - lo) / range, 0.0, 1.0));
    }
  }
  return {Tensor(cover.shape(), std::move(out)), MaskSource::sobel};
}

Tensor apply_attention(const Tensor& cover, const AttentionMask& mask) {
  if (cover.shape() != mask.values.shape()) {
    throw ShapeError("attention mask " + to_string(mask.values.shape()) +
                     " does not match cover " + to_string(cover.shape()));
  }
  return ops::mul(cover, mask.values);
}

Tensor expand_message(const Tensor& encoded, std::size_t height, std::size_t width) {
  return ops::expand_spatial(encoded, height, width);
}

}  // namespace iga
