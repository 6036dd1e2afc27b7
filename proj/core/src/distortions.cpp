// SPDX-License-Identifier: Apache-2.0
#include "iga/distortions.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <sstream>

#include "iga/ops.hpp"

namespace iga {

std::string_view to_string(DistortionKind k) {
  switch (k) {
    case DistortionKind::identity: return "identity";
    case DistortionKind::crop: return "crop";
    case DistortionKind::cropout: return "cropout";
    case DistortionKind::dropout: return "dropout";
    case DistortionKind::resize: return "resize";
    case DistortionKind::jpeg: return "jpeg";
  }
  return "identity";
}

namespace {

double parse_number(std::string_view s, std::string_view context) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("invalid number '" + std::string(s) + "' in '" +
                                std::string(context) + "'");
  }
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

void check_open_unit(double v, const char* name) {
  if (!(v > 0.0 && v < 1.0)) {
    throw std::invalid_argument(std::string(name) + "=" + std::to_string(v) +
                                " must lie in (0, 1)");
  }
}

void check_closed_unit(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw std::invalid_argument(std::string(name) + "=" + std::to_string(v) +
                                " must lie in [0, 1]");
  }
}

void require_images(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected NCHW batch, got " + to_string(t.shape()));
  }
}

void require_pair(const Tensor& encoded, const Tensor& cover, const char* op) {
  require_images(encoded, op);
  if (encoded.shape() != cover.shape()) {
    throw ShapeError(std::string(op) + ": encoded " + to_string(encoded.shape()) +
                     " vs cover " + to_string(cover.shape()));
  }
}

// Mask that is 1 inside one random rectangle per image with the given
// side fraction.
Tensor rectangle_mask(const Shape& shape, double area_ratio, Rng& rng) {
  const std::size_t n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  const double side = std::sqrt(area_ratio);
  const auto rh = static_cast<std::size_t>(std::floor(side * static_cast<double>(h) + 1e-9));
  const auto rw = static_cast<std::size_t>(std::floor(side * static_cast<double>(w) + 1e-9));
  std::vector<real> m(numel(shape), real(0));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t top = rng.below(h - rh + 1);
    const std::size_t left = rng.below(w - rw + 1);
    for (std::size_t ch = 0; ch < c; ++ch) {
      real* plane = m.data() + (i * c + ch) * h * w;
      for (std::size_t y = top; y < top + rh; ++y)
        std::fill_n(plane + y * w + left, rw, real(1));
    }
  }
  return Tensor(shape, std::move(m));
}

Tensor bernoulli_pixel_mask(const Shape& shape, double p, Rng& rng) {
  const std::size_t n = shape[0], c = shape[1], hw = shape[2] * shape[3];
  std::vector<real> m(numel(shape));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      const real keep = rng.bernoulli(p) ? real(1) : real(0);
      for (std::size_t ch = 0; ch < c; ++ch) m[(i * c + ch) * hw + j] = keep;
    }
  }
  return Tensor(shape, std::move(m));
}

constexpr std::array<int, 64> kZigZag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

// D^T diag(mask) D for the orthonormal 2-D DCT D acting on row-major blocks.
std::vector<real> dct_mask_operator(std::size_t keep) {
  std::array<double, 64> c1{};
  for (int u = 0; u < 8; ++u) {
    const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int x = 0; x < 8; ++x) c1[u * 8 + x] = a * std::cos((2 * x + 1) * u * M_PI / 16.0);
  }
  std::array<double, 64 * 64> d{};
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v)
      for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y) d[(u * 8 + v) * 64 + x * 8 + y] = c1[u * 8 + x] * c1[v * 8 + y];
  std::array<bool, 64> kept{};
  for (std::size_t i = 0; i < keep && i < 64; ++i) kept[static_cast<std::size_t>(kZigZag[i])] = true;
  std::vector<real> op(64 * 64);
  for (int r = 0; r < 64; ++r) {
    for (int s = 0; s < 64; ++s) {
      double acc = 0;
      for (int f = 0; f < 64; ++f) {
        if (kept[static_cast<std::size_t>(f)]) acc += d[f * 64 + r] * d[f * 64 + s];
      }
      op[static_cast<std::size_t>(r * 64 + s)] = static_cast<real>(acc);
    }
  }
  return op;
}

// JFIF RGB -> YCbCr without offsets (offsets cancel on the way back).
constexpr std::array<double, 9> kRgbToYcc = {0.299,     0.587,     0.114,     -0.168736, -0.331264,
                                             0.5,       0.5,       -0.418688, -0.081312};

std::array<double, 9> invert3(const std::array<double, 9>& m) {
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  return {(m[4] * m[8] - m[5] * m[7]) / det, (m[2] * m[7] - m[1] * m[8]) / det,
          (m[1] * m[5] - m[2] * m[4]) / det, (m[5] * m[6] - m[3] * m[8]) / det,
          (m[0] * m[8] - m[2] * m[6]) / det, (m[2] * m[3] - m[0] * m[5]) / det,
          (m[3] * m[7] - m[4] * m[6]) / det, (m[1] * m[6] - m[0] * m[7]) / det,
          (m[0] * m[4] - m[1] * m[3]) / det};
}

Tensor color_transform(const Tensor& x, const std::array<double, 9>& m) {
  std::vector<real> w(9);
  for (std::size_t i = 0; i < 9; ++i) w[i] = static_cast<real>(m[i]);
  return ops::conv2d(x, Tensor(Shape{3, 3, 1, 1}, std::move(w)), Tensor(Shape{0}), 0);
}

Tensor real_jpeg(const Tensor& encoded, double quality) {
  const std::size_t n = encoded.dim(0), c = encoded.dim(1), h = encoded.dim(2), w = encoded.dim(3);
  if (c != 3) throw ShapeError("jpeg: expected 3-channel images");
  const int q = std::clamp(static_cast<int>(std::lround(quality)), 1, 100);
  const std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, q};
  std::vector<real> out(encoded.size());
  const auto in = encoded.data();
  for (std::size_t i = 0; i < n; ++i) {
    cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
    const real* base = in.data() + i * c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      auto* row = img.ptr<cv::Vec3b>(static_cast<int>(y));
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = std::clamp(static_cast<double>(base[ch * h * w + y * w + x]), 0.0, 1.0);
          row[x][static_cast<int>(2 - ch)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
      }
    }
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".jpg", img, buf, params)) throw std::runtime_error("jpeg encode failed");
    cv::Mat dec = cv::imdecode(buf, cv::IMREAD_COLOR);
    if (dec.empty()) throw std::runtime_error("jpeg decode failed");
    real* dst = out.data() + i * c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      const auto* row = dec.ptr<cv::Vec3b>(static_cast<int>(y));
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          dst[ch * h * w + y * w + x] = static_cast<real>(row[x][static_cast<int>(2 - ch)] / 255.0);
        }
      }
    }
  }
  return Tensor(encoded.shape(), std::move(out));
}

}  // namespace

DistortionSpec DistortionSpec::parse(std::string_view text) {
  text = trim(text);
  DistortionSpec spec;
  const auto colon = text.find(':');
  const auto name = trim(text.substr(0, colon));
  if (name == "identity") spec.kind = DistortionKind::identity;
  else if (name == "crop") spec.kind = DistortionKind::crop;
  else if (name == "cropout") spec.kind = DistortionKind::cropout;
  else if (name == "dropout") spec.kind = DistortionKind::dropout;
  else if (name == "resize") spec.kind = DistortionKind::resize;
  else if (name == "jpeg") spec.kind = DistortionKind::jpeg;
  else throw std::invalid_argument("unknown distortion '" + std::string(name) + "'");

  if (colon != std::string_view::npos) {
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
      const auto sep = rest.find(';');
      const auto item = trim(rest.substr(0, sep));
      rest = sep == std::string_view::npos ? std::string_view{} : rest.substr(sep + 1);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) {
        throw std::invalid_argument("expected key=value in '" + std::string(text) + "'");
      }
      const auto key = trim(item.substr(0, eq));
      const double v = parse_number(trim(item.substr(eq + 1)), text);
      if (key == "p" && spec.kind == DistortionKind::crop) spec.crop_ratio = v;
      else if ((key == "p" || key == "pc") && spec.kind == DistortionKind::cropout) spec.cropout_ratio = v;
      else if ((key == "p" || key == "pd") && spec.kind == DistortionKind::dropout) spec.dropout_ratio = v;
      else if (key == "z" && spec.kind == DistortionKind::resize) spec.zoom = v;
      else if (key == "q" && spec.kind == DistortionKind::jpeg) spec.quality = v;
      else {
        throw std::invalid_argument("parameter '" + std::string(key) + "' does not apply to " +
                                    std::string(name));
      }
    }
  }
  spec.validate();
  return spec;
}

std::string DistortionSpec::to_string() const {
  std::ostringstream os;
  os << iga::to_string(kind);
  switch (kind) {
    case DistortionKind::identity: break;
    case DistortionKind::crop: os << ":p=" << crop_ratio; break;
    case DistortionKind::cropout: os << ":p=" << cropout_ratio; break;
    case DistortionKind::dropout: os << ":p=" << dropout_ratio; break;
    case DistortionKind::resize: os << ":z=" << zoom; break;
    case DistortionKind::jpeg: os << ":q=" << quality; break;
  }
  return os.str();
}

void DistortionSpec::validate() const {
  switch (kind) {
    case DistortionKind::identity: break;
    case DistortionKind::crop: check_open_unit(crop_ratio, "crop p"); break;
    case DistortionKind::cropout: check_closed_unit(cropout_ratio, "cropout p_c"); break;
    case DistortionKind::dropout: check_closed_unit(dropout_ratio, "dropout p_d"); break;
    case DistortionKind::resize: check_open_unit(zoom, "resize z"); break;
    case DistortionKind::jpeg:
      if (!(quality > 0 && quality < 100)) {
        throw std::invalid_argument("jpeg q=" + std::to_string(quality) + " must lie in (0, 100)");
      }
      break;
  }
}

ChannelConfig ChannelConfig::combined(const DistortionSpec& defaults) {
  ChannelConfig cfg;
  cfg.mode = SamplingMode::combined;
  for (auto kind : {DistortionKind::crop, DistortionKind::cropout, DistortionKind::dropout,
                    DistortionKind::resize, DistortionKind::jpeg}) {
    auto s = defaults;
    s.kind = kind;
    cfg.specs.push_back(s);
  }
  return cfg;
}

ChannelConfig ChannelConfig::parse(std::string_view text) {
  text = trim(text);
  if (text == "combined") return combined();
  if (text.starts_with("combined:")) {
    ChannelConfig cfg;
    cfg.mode = SamplingMode::combined;
    std::string_view rest = text.substr(9);
    while (!rest.empty()) {
      const auto sep = rest.find(',');
      cfg.specs.push_back(DistortionSpec::parse(rest.substr(0, sep)));
      rest = sep == std::string_view::npos ? std::string_view{} : rest.substr(sep + 1);
    }
    cfg.validate();
    return cfg;
  }
  ChannelConfig cfg;
  cfg.specs.push_back(DistortionSpec::parse(text));
  return cfg;
}

std::string ChannelConfig::to_string() const {
  if (mode == SamplingMode::fixed && specs.size() == 1) return specs.front().to_string();
  std::string s = "combined:";
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) s += ',';
    s += specs[i].to_string();
  }
  return s;
}

void ChannelConfig::validate() const {
  if (specs.empty()) throw std::invalid_argument("channel has no distortion specs");
  if (mode == SamplingMode::combined && specs.size() < 2) {
    throw std::invalid_argument("combined channel needs at least two specs");
  }
  if (mode == SamplingMode::fixed && specs.size() != 1) {
    throw std::invalid_argument("fixed channel takes exactly one spec");
  }
  for (const auto& s : specs) s.validate();
}

DistortionSpec sample_channel(const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.mode == SamplingMode::fixed) return cfg.specs.front();
  return cfg.specs[rng.below(cfg.specs.size())];
}

DistortionDraw draw_distortion(const DistortionSpec& spec, const Shape& shape, Rng& rng) {
  spec.validate();
  if (shape.size() != 4) throw ShapeError("draw_distortion: expected NCHW shape");
  DistortionDraw d{spec, Tensor()};
  switch (spec.kind) {
    case DistortionKind::crop: d.mask = rectangle_mask(shape, spec.crop_ratio, rng); break;
    case DistortionKind::cropout: d.mask = rectangle_mask(shape, spec.cropout_ratio, rng); break;
    case DistortionKind::dropout: d.mask = bernoulli_pixel_mask(shape, spec.dropout_ratio, rng); break;
    default: break;
  }
  return d;
}

Tensor apply_distortion(const DistortionDraw& draw, const Tensor& encoded, const Tensor& cover,
                        JpegMode jpeg_mode) {
  const auto& s = draw.spec;
  switch (s.kind) {
    case DistortionKind::identity: return identity(encoded);
    case DistortionKind::crop:
      require_images(encoded, "crop");
      return ops::mul(encoded, draw.mask);
    case DistortionKind::cropout:
      require_pair(encoded, cover, "cropout");
      return ops::blend(encoded, cover, draw.mask);
    case DistortionKind::dropout:
      require_pair(encoded, cover, "dropout");
      return ops::blend(encoded, cover, draw.mask);
    case DistortionKind::resize: return resize(encoded, s.zoom);
    case DistortionKind::jpeg: return jpeg(encoded, s.quality, jpeg_mode);
  }
  return encoded;
}

Tensor identity(const Tensor& encoded) { return encoded; }

Tensor crop(const Tensor& encoded, double p, Rng& rng) {
  require_images(encoded, "crop");
  check_open_unit(p, "crop p");
  return ops::mul(encoded, rectangle_mask(encoded.shape(), p, rng));
}

Tensor cropout(const Tensor& encoded, const Tensor& cover, double p_c, Rng& rng) {
  require_pair(encoded, cover, "cropout");
  check_closed_unit(p_c, "cropout p_c");
  return ops::blend(encoded, cover, rectangle_mask(encoded.shape(), p_c, rng));
}

Tensor dropout(const Tensor& encoded, const Tensor& cover, double p_d, Rng& rng) {
  require_pair(encoded, cover, "dropout");
  check_closed_unit(p_d, "dropout p_d");
  return ops::blend(encoded, cover, bernoulli_pixel_mask(encoded.shape(), p_d, rng));
}

std::vector<real> bilinear_matrix(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw std::invalid_argument("bilinear_matrix: empty dimension");
  std::vector<real> m(out * in, real(0));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double t = src - static_cast<double>(lo);
    m[i * in + lo] += static_cast<real>(1.0 - t);
    m[i * in + hi] += static_cast<real>(t);
  }
  return m;
}

namespace {

std::vector<real> matmul_rowmajor(const std::vector<real>& a, const std::vector<real>& b,
                                  std::size_t n, std::size_t m, std::size_t p) {
  std::vector<real> c(n * p, real(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < p; ++j) c[i * p + j] += a[i * m + k] * b[k * p + j];
  return c;
}

}  // namespace

Tensor resize(const Tensor& encoded, double z) {
  require_images(encoded, "resize");
  check_open_unit(z, "resize z");
  const std::size_t h = encoded.dim(2), w = encoded.dim(3);
  const auto sh = static_cast<std::size_t>(std::lround(z * static_cast<double>(h)));
  const auto sw = static_cast<std::size_t>(std::lround(z * static_cast<double>(w)));
  if (sh < 1 || sw < 1) {
    throw std::invalid_argument("resize: zoom " + std::to_string(z) + " leaves no pixels");
  }
  const auto ph = matmul_rowmajor(bilinear_matrix(sh, h), bilinear_matrix(h, sh), h, sh, h);
  const auto pw = matmul_rowmajor(bilinear_matrix(sw, w), bilinear_matrix(w, sw), w, sw, w);
  return ops::separable_map(encoded, ph, h, pw, w);
}

std::size_t jpeg_luma_keep(double quality) {
  const double f = std::clamp(quality / 100.0, 0.0, 1.0);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(64.0 * f * f)), 1, 64);
}

std::size_t jpeg_chroma_keep(double quality) {
  return std::max<std::size_t>(1, (jpeg_luma_keep(quality) + 2) / 4);
}

Tensor jpeg_coefficient_mask(const Tensor& encoded, std::size_t keep_luma,
                             std::size_t keep_chroma) {
  require_images(encoded, "jpeg");
  if (encoded.dim(1) != 3) throw ShapeError("jpeg: expected 3-channel images");
  if (encoded.dim(2) % 8 != 0 || encoded.dim(3) % 8 != 0) {
    throw ShapeError("jpeg: image dims must be divisible by 8, got " +
                     to_string(encoded.shape()));
  }
  const auto luma = dct_mask_operator(keep_luma);
  const auto chroma = dct_mask_operator(keep_chroma);
  const std::vector<real> per_channel[] = {luma, chroma, chroma};
  auto ycc = color_transform(encoded, kRgbToYcc);
  auto filtered = ops::block_map8(ycc, per_channel);
  auto rgb = color_transform(filtered, invert3(kRgbToYcc));
  return ops::clamp(rgb, real(0), real(1));
}

Tensor jpeg(const Tensor& encoded, double quality, JpegMode mode) {
  require_images(encoded, "jpeg");
  if (!(quality > 0 && quality < 100)) {
    throw std::invalid_argument("jpeg q=" + std::to_string(quality) + " must lie in (0, 100)");
  }
  if (encoded.dim(2) % 8 != 0 || encoded.dim(3) % 8 != 0) {
    throw ShapeError("jpeg: image dims must be divisible by 8, got " +
                     to_string(encoded.shape()));
  }
  if (mode == JpegMode::eval_real) return real_jpeg(encoded, quality);
  return jpeg_coefficient_mask(encoded, jpeg_luma_keep(quality), jpeg_chroma_keep(quality));
}

}  // namespace iga
