// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "iga/train.hpp"
#include "support/synthetic.hpp"

using namespace iga;

namespace {

void BM_TrainStep(benchmark::State& state) {
  NetConfig net;
  net.height = net.width = static_cast<std::size_t>(state.range(0));
  net.base_width = static_cast<std::size_t>(state.range(1));
  net.extractor_blocks = 2;
  net.embedder_blocks = 2;
  net.decoder_blocks = 3;
  net.discriminator_blocks = 2;
  TrainConfig cfg;
  cfg.batch_size = 8;
  auto ts = make_train_state(net, cfg);
  auto data = iga::testing::synthetic_dataset(8, net.height, net.width, 1);
  Rng rng(2);
  std::vector<BitMessage> msgs;
  for (int i = 0; i < 8; ++i) msgs.push_back(random_message(net.k, rng));
  for (auto _ : state) benchmark::DoNotOptimize(train_step(ts, data.images, msgs));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainStep)->Args({32, 32})->Args({64, 16})->Args({64, 32})->Unit(benchmark::kMillisecond);

void BM_EmbedBatch(benchmark::State& state) {
  NetConfig net;
  net.height = net.width = 64;
  net.base_width = 32;
  auto model = Model::create(net, 3);
  auto data = iga::testing::synthetic_dataset(8, 64, 64, 4);
  Rng rng(5);
  std::vector<BitMessage> msgs;
  for (int i = 0; i < 8; ++i) msgs.push_back(random_message(net.k, rng));
  auto cover = stack_images(data.images);
  auto bits = stack_messages(msgs);
  for (auto _ : state) benchmark::DoNotOptimize(embed_batch(model, cover, bits, {}));
}
BENCHMARK(BM_EmbedBatch)->Unit(benchmark::kMillisecond);

}  // namespace
