#include <random>

#include <benchmark/benchmark.h>

#include "misclass/causal_test.hpp"
#include "misclass/intervention.hpp"
#include "misclass/stats.hpp"

using namespace misclass;

namespace {

std::vector<LabeledImage> images(std::size_t n, std::size_t classes) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> px(0, 255);
  std::vector<LabeledImage> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (auto& v : out[k].image.pixels) v = static_cast<std::uint8_t>(px(rng));
    out[k].label = static_cast<std::uint8_t>(k % classes);
    out[k].id = "b:" + std::to_string(k);
  }
  return out;
}

void BM_Forward(benchmark::State& state) {
  const auto ims = images(1, 10);
  const auto x = normalize_image(ims[0].image, compute_channel_stats(ims));
  const auto p = init_model(0, 10);
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, x));
}
BENCHMARK(BM_Forward);

void BM_InputGradient(benchmark::State& state) {
  const auto ims = images(1, 10);
  const auto x = normalize_image(ims[0].image, compute_channel_stats(ims));
  const auto p = init_model(0, 10);
  for (auto _ : state) benchmark::DoNotOptimize(input_gradient(p, x, 3));
}
BENCHMARK(BM_InputGradient);

void BM_TrainEpoch(benchmark::State& state) {
  const auto ims = images(256, 3);
  const auto xs = normalize_all(ims, compute_channel_stats(ims));
  std::vector<std::size_t> labels;
  for (const auto& im : ims) labels.push_back(im.label);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 32;
  const auto p = init_model(0, 3);
  for (auto _ : state) benchmark::DoNotOptimize(train(p, xs, labels, tc));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ims.size()));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_Tally(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> label(0, 9);
  std::vector<ClassificationRecord> records(static_cast<std::size_t>(state.range(0)));
  for (auto& r : records) {
    r.true_label = label(rng);
    r.predicted_label = label(rng);
    r.scores.values.assign(10, 0.0);
    r.scores.values[r.predicted_label] = 1.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(rate_table(tally(records)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Tally)->Arg(10000)->Arg(100000);

void BM_TCdf(benchmark::State& state) {
  const double x = static_cast<double>(state.range(0)) / 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(t_cdf(x, 30));
}
BENCHMARK(BM_TCdf)->Arg(5)->Arg(25)->Arg(300);

void BM_Intervention(benchmark::State& state) {
  const auto ims = images(8, 3);
  const auto stats = compute_channel_stats(ims);
  const auto p = init_model(0, 3);
  InterventionSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(do_intervention(p, stats, ims[0], spec));
}
BENCHMARK(BM_Intervention);

}  // namespace

BENCHMARK_MAIN();
