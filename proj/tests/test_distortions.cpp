// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>

#include "iga/distortions.hpp"
#include "iga/random.hpp"

using namespace iga;

namespace {

Tensor random_image(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<real> v(numel(s));
  for (auto& x : v) x = static_cast<real>(rng.uniform(0.05, 0.95));
  return Tensor(std::move(s), std::move(v));
}

bool equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE_BEGIN("distortions");

TEST_CASE("spec parsing and validation") {
  auto s = DistortionSpec::parse("jpeg:q=75");
  CHECK(s.kind == DistortionKind::jpeg);
  CHECK(s.quality == 75);
  CHECK(DistortionSpec::parse("crop").crop_ratio == 0.3);
  CHECK(DistortionSpec::parse("resize:z=0.5").to_string() == "resize:z=0.5");
  CHECK_THROWS_AS(DistortionSpec::parse("crop:p=1.5"), std::invalid_argument);
  CHECK_THROWS_AS(DistortionSpec::parse("jpeg:q=100"), std::invalid_argument);
  CHECK_THROWS_AS(DistortionSpec::parse("blur"), std::invalid_argument);
  CHECK_THROWS_AS(DistortionSpec::parse("crop:z=0.5"), std::invalid_argument);
  auto cn = ChannelConfig::parse("combined");
  CHECK(cn.mode == SamplingMode::combined);
  CHECK(cn.specs.size() == 5);
  CHECK_THROWS_AS(ChannelConfig::parse("combined:crop"), std::invalid_argument);
  DistortionSpec d;
  CHECK(d.crop_ratio == 0.3);
  CHECK(d.cropout_ratio == 0.3);
  CHECK(d.dropout_ratio == 0.3);
  CHECK(d.zoom == 0.7);
  CHECK(d.quality == 50);
}

TEST_CASE("identity is bit-identical") {
  auto x = random_image({2, 3, 8, 8}, 1);
  CHECK(equal(identity(x), x));
}

TEST_CASE("crop keeps floor(sqrt(p)H) x floor(sqrt(p)W) pixels") {
  Tensor ones({1, 3, 128, 128}, real(1));
  Rng rng(3);
  auto y = crop(ones, 0.25, rng);
  double kept = 0;
  for (real v : y.data()) kept += v;
  CHECK(kept == 3.0 * 64 * 64);
  for (double p : {0.1, 0.3, 0.77}) {
    Tensor img({2, 3, 40, 24}, real(1));
    auto out = crop(img, p, rng);
    const double expect = std::floor(std::sqrt(p) * 40) * std::floor(std::sqrt(p) * 24);
    for (std::size_t n = 0; n < 2; ++n) {
      double count = 0;
      for (std::size_t i = 0; i < 40 * 24; ++i) count += out[n * 3 * 40 * 24 + i];
      CHECK(count == expect);
    }
  }
  // Retained pixels are untouched.
  auto x = random_image({1, 3, 16, 16}, 4);
  auto c = crop(x, 0.99, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK((c[i] == x[i] || c[i] == 0));
  CHECK_THROWS_AS(crop(x, 1.0, rng), std::invalid_argument);
}

TEST_CASE("cropout and dropout boundary identities") {
  auto enc = random_image({2, 3, 16, 16}, 5);
  auto cov = random_image({2, 3, 16, 16}, 6);
  Rng rng(7);
  CHECK(equal(cropout(enc, cov, 1.0, rng), enc));
  CHECK(equal(cropout(enc, cov, 0.0, rng), cov));
  CHECK(equal(dropout(enc, cov, 1.0, rng), enc));
  CHECK(equal(dropout(enc, cov, 0.0, rng), cov));
  for (double p : {0.3, 0.6}) {
    auto a = cropout(enc, cov, p, rng);
    auto b = dropout(enc, cov, p, rng);
    for (std::size_t i = 0; i < enc.size(); ++i) {
      CHECK((a[i] == enc[i] || a[i] == cov[i]));
      CHECK((b[i] == enc[i] || b[i] == cov[i]));
    }
  }
  CHECK_THROWS_AS(cropout(enc, random_image({2, 3, 16, 8}, 1), 0.5, rng), ShapeError);
  CHECK_THROWS_AS(dropout(enc, cov, 1.2, rng), std::invalid_argument);
}

TEST_CASE("dropout keeps about p_d of the pixels") {
  const std::size_t hw = 128 * 128;
  Tensor enc({1, 3, 128, 128}, real(1)), cov({1, 3, 128, 128}, real(0));
  Rng rng(11);
  for (double p : {0.3, 0.5, 0.9}) {
    auto y = dropout(enc, cov, p, rng);
    double kept = 0;
    for (std::size_t i = 0; i < hw; ++i) kept += y[i];
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(hw));
    CHECK(std::abs(kept / static_cast<double>(hw) - p) <= 3 * sigma);
  }
}

TEST_CASE("resize preserves constants and shape") {
  Tensor c({2, 3, 16, 24}, real(0.37));
  for (double z : {0.5, 0.7, 0.33}) {
    auto y = resize(c, z);
    CHECK(y.shape() == c.shape());
    for (real v : y.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));
  }
  CHECK_THROWS_AS(resize(Tensor({1, 3, 2, 2}), 0.1), std::invalid_argument);
}

TEST_CASE("jpeg approximation") {
  auto x = random_image({2, 3, 16, 24}, 8);
  auto full = jpeg_coefficient_mask(x, 64, 64);
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(double(full[i]) - double(x[i])));
  CHECK(worst <= 1e-6);

  Tensor c({1, 3, 16, 16}, real(0.6));
  for (double q : {10.0, 50.0, 90.0}) {
    auto a = jpeg(c, q, JpegMode::train_approx);
    for (real v : a.data()) CHECK(v == doctest::Approx(0.6).epsilon(1e-5));
  }
  // Real JPEG quantises the DC term too; at high quality a flat image is
  // within one 8-bit level.
  auto r = jpeg(c, 90, JpegMode::eval_real);
  for (real v : r.data()) CHECK(std::abs(v - real(0.6)) <= real(1.0 / 255));
  CHECK(jpeg_luma_keep(90) >= jpeg_luma_keep(50));
  CHECK(jpeg_luma_keep(50) >= jpeg_luma_keep(10));
  auto y = jpeg(x, 50, JpegMode::train_approx);
  CHECK(y.shape() == x.shape());
  for (real v : y.data()) {
    CHECK(v >= 0);
    CHECK(v <= 1);
  }
  CHECK_THROWS_AS(jpeg(Tensor({1, 3, 12, 16}), 50, JpegMode::train_approx), ShapeError);
}

TEST_CASE("every distortion preserves shape") {
  auto enc = random_image({2, 3, 16, 16}, 9);
  auto cov = random_image({2, 3, 16, 16}, 10);
  Rng rng(12);
  for (const char* s : {"identity", "crop", "cropout", "dropout", "resize", "jpeg"}) {
    auto d = draw_distortion(DistortionSpec::parse(s), enc.shape(), rng);
    for (auto mode : {JpegMode::train_approx, JpegMode::eval_real}) {
      CHECK(apply_distortion(d, enc, cov, mode).shape() == enc.shape());
    }
  }
}

TEST_CASE("combined sampler frequencies and determinism") {
  auto cn = ChannelConfig::combined();
  Rng rng(13);
  std::map<DistortionKind, int> counts;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[sample_channel(cn, rng).kind];
  CHECK(counts.size() == 5);
  CHECK(counts.count(DistortionKind::identity) == 0);
  for (const auto& [kind, n] : counts) {
    INFO(to_string(kind));
    CHECK(std::abs(n / double(draws) - 0.2) <= 0.02);
  }
  auto fixed = ChannelConfig::parse("identity");
  for (int i = 0; i < 100; ++i) CHECK(sample_channel(fixed, rng).kind == DistortionKind::identity);
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(sample_channel(cn, a) == sample_channel(cn, b));
}

TEST_SUITE_END();
