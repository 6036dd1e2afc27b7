// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "iga/attention.hpp"
#include "iga/distortions.hpp"
#include "iga/ops.hpp"

using namespace iga;

namespace {

Tensor filled(Shape s, std::uint64_t seed, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<real> v(numel(s));
  for (auto& x : v) x = static_cast<real>(rng.uniform(-1, 1));
  Tensor t(std::move(s), std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

void BM_Conv3x3Forward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto x = filled({8, c, hw, hw}, 1);
  auto w = filled({c, c, 3, 3}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, Tensor(Shape{0}), 1));
  state.counters["GFLOP/s"] = benchmark::Counter(2e-9 * 8 * c * c * 9 * hw * hw,
                                                 benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3Forward)->Args({16, 64})->Args({32, 64})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_Conv3x3Backward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto x = filled({8, c, hw, hw}, 1, true);
  auto w = filled({c, c, 3, 3}, 2, true);
  const Tensor wrt[] = {x, w};
  for (auto _ : state) {
    auto loss = ops::sum(ops::conv2d(x, w, Tensor(Shape{0}), 1));
    benchmark::DoNotOptimize(grad(loss, wrt));
  }
}
BENCHMARK(BM_Conv3x3Backward)->Args({16, 64})->Args({32, 64})->Unit(benchmark::kMillisecond);

void BM_BatchNormTrain(benchmark::State& state) {
  auto x = filled({8, 32, 64, 64}, 3);
  auto gamma = filled({32}, 4);
  auto beta = filled({32}, 5);
  ops::BatchNormState st;
  st.running_mean.assign(32, 0);
  st.running_var.assign(32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ops::batch_norm(x, gamma, beta, st, true, true));
}
BENCHMARK(BM_BatchNormTrain)->Unit(benchmark::kMillisecond);

void BM_JpegApprox(benchmark::State& state) {
  auto x = filled({8, 3, 64, 64}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(jpeg(x, 50, JpegMode::train_approx));
}
BENCHMARK(BM_JpegApprox)->Unit(benchmark::kMillisecond);

void BM_JpegReal(benchmark::State& state) {
  auto x = ops::clamp(filled({8, 3, 64, 64}, 7), 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(jpeg(x, 50, JpegMode::eval_real));
}
BENCHMARK(BM_JpegReal)->Unit(benchmark::kMillisecond);

void BM_Resize(benchmark::State& state) {
  auto x = filled({8, 3, 64, 64}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(resize(x, 0.7));
}
BENCHMARK(BM_Resize)->Unit(benchmark::kMillisecond);

void BM_SobelMask(benchmark::State& state) {
  auto x = ops::clamp(filled({8, 3, 64, 64}, 9), 0, 1);
  for (auto _ : state) benchmark::DoNotOptimize(sobel_mask(x));
}
BENCHMARK(BM_SobelMask)->Unit(benchmark::kMillisecond);

}  // namespace
