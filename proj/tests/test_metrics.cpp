// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "iga/dataio.hpp"
#include "iga/evaluate.hpp"
#include "iga/metrics.hpp"

using namespace iga;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("bpa counts agreeing bits") {
  const auto m = BitMessage::from_string("10110");
  CHECK(bpa(m, m) == 1.0);
  CHECK(bpa(m, BitMessage::from_string("10010")) == 4.0 / 5.0);
  CHECK(bpa(m, BitMessage::from_string("01001")) == 0.0);
  CHECK_THROWS_AS(bpa(m, BitMessage::from_string("1011")), std::invalid_argument);
}

TEST_CASE("bpa of independent random messages is near one half") {
  Rng a(1), b(2);
  const std::size_t k = 10000;
  const double v = bpa(random_message(k, a), random_message(k, b));
  // 3 sigma of Binomial(10^4, 0.5) / 10^4 is 0.015.
  CHECK(std::abs(v - 0.5) <= 0.015);
}

TEST_CASE("psnr closed forms") {
  std::vector<real> x(300), y(300);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 0.2 + 0.5 * static_cast<double>(i) / 300.0;
    y[i] = x[i] + 0.1;
  }
  CHECK(psnr(x, x) == 100.0);
  CHECK(std::abs(psnr(x, y) - 20.0) <= 1e-9);
  CHECK(psnr(x, y) == psnr(y, x));
  // Strictly decreasing in the perturbation size.
  double prev = 1e9;
  for (double d : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + d;
    const double p = psnr(x, y);
    CHECK(p < prev);
    CHECK(std::abs(p - (-20.0 * std::log10(d))) <= 1e-9);
    prev = p;
  }
  std::vector<real> short_y(10);
  CHECK_THROWS_AS(psnr(x, short_y), std::invalid_argument);
}

TEST_CASE("rs_bpp is k(2p-1)") {
  CHECK(rs_bpp(30, 0.5) == 0.0);
  CHECK(rs_bpp(30, 1.0) == 30.0);
  CHECK(rs_bpp(30, 0.9996) == doctest::Approx(29.976).epsilon(1e-12));
  for (double p : {0.0, 0.1, 0.37, 0.5, 0.8}) {
    CHECK(rs_bpp(30, p) == doctest::Approx(-rs_bpp(30, 1 - p)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(rs_bpp(30, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(rs_bpp(30, 1.1), std::invalid_argument);
}

TEST_SUITE_END();
