// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels against the OpenMP kernels, plus a full
// forward/backward pass. Run with OMP_NUM_THREADS set to compare scaling.

#include <benchmark/benchmark.h>

#include <numeric>
#include <random>
#include <vector>

#include "nca/data.hpp"
#include "nca/kernels.hpp"
#include "nca/model.hpp"
#include "nca/train.hpp"

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<int> half_cells(int cells) {
  std::vector<int> out;
  for (int c = 0; c < cells; c += 2) out.push_back(c);
  return out;
}

template <bool Reference>
void BM_DepthwiseConv(benchmark::State& state) {
  const nca::GridShape s{64, 64, static_cast<int>(state.range(0))};
  const auto x = random_values(s.size(), 1);
  const auto k = random_values(static_cast<std::size_t>(s.channels) * 9, 2);
  std::vector<float> out(s.size());
  for (auto _ : state) {
    if constexpr (Reference) nca::reference::depthwise_conv3x3<float>(x, s, k, out);
    else nca::kernels::depthwise_conv3x3<float>(x, s, k, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(s.size()) * 9);
}

template <bool Reference>
void BM_PerceiveRows(benchmark::State& state) {
  const nca::GridShape s{64, 64, static_cast<int>(state.range(0))};
  const auto x = random_values(s.size(), 1);
  const auto k1 = random_values(static_cast<std::size_t>(s.channels) * 9, 2);
  const auto k2 = random_values(static_cast<std::size_t>(s.channels) * 9, 3);
  const auto cells = half_cells(static_cast<int>(s.cells()));
  std::vector<float> out(cells.size() * 3 * s.channels);
  for (auto _ : state) {
    if constexpr (Reference) nca::reference::perceive_rows<float>(x, s, k1, k2, cells, out);
    else nca::kernels::perceive_rows<float>(x, s, k1, k2, cells, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_PerceiveRowsBackward(benchmark::State& state) {
  const nca::GridShape s{64, 64, static_cast<int>(state.range(0))};
  const auto x = random_values(s.size(), 1);
  const auto k1 = random_values(static_cast<std::size_t>(s.channels) * 9, 2);
  const auto k2 = random_values(static_cast<std::size_t>(s.channels) * 9, 3);
  const auto cells = half_cells(static_cast<int>(s.cells()));
  const auto g = random_values(cells.size() * 3 * s.channels, 4);
  std::vector<float> gx(s.size()), gk1(k1.size()), gk2(k2.size());
  for (auto _ : state) {
    if constexpr (Reference) nca::reference::perceive_rows_backward<float>(x, s, k1, k2, cells, g, gx, gk1, gk2);
    else nca::kernels::perceive_rows_backward<float>(x, s, k1, k2, cells, g, gx, gk1, gk2);
    benchmark::DoNotOptimize(gx.data());
  }
}

template <bool Reference>
void BM_Linear(benchmark::State& state) {
  const int in = static_cast<int>(state.range(0));
  const int out = static_cast<int>(state.range(1));
  const std::size_t rows = 2048;
  const auto x = random_values(rows * in, 1);
  const auto w = random_values(static_cast<std::size_t>(in) * out, 2);
  const auto b = random_values(static_cast<std::size_t>(out), 3);
  std::vector<float> y(rows * out);
  for (auto _ : state) {
    if constexpr (Reference) nca::reference::linear<float>(x, rows, in, w, b, out, y);
    else nca::kernels::linear<float>(x, rows, in, w, b, out, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows) * in * out);
}

template <bool Reference>
void BM_LinearBackward(benchmark::State& state) {
  const int in = static_cast<int>(state.range(0));
  const int out = static_cast<int>(state.range(1));
  const std::size_t rows = 2048;
  const auto x = random_values(rows * in, 1);
  const auto w = random_values(static_cast<std::size_t>(in) * out, 2);
  const auto g = random_values(rows * out, 3);
  std::vector<float> gx(rows * in), gw(w.size()), gb(static_cast<std::size_t>(out));
  for (auto _ : state) {
    if constexpr (Reference) nca::reference::linear_backward<float>(x, rows, in, w, out, g, gx, gw, gb);
    else nca::kernels::linear_backward<float>(x, rows, in, w, out, g, gx, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows) * in * out * 2);
}

void BM_LossAndGradient(benchmark::State& state) {
  nca::NcaConfig config;
  config.channels = static_cast<int>(state.range(0));
  config.steps = 24;
  config.update_hidden = static_cast<int>(state.range(1));
  config.classifier_hidden = 32;
  config.num_classes = 3;
  nca::retain_freed_memory();
  const auto params = nca::init_params<float>(config, 7);
  const auto samples = nca::synth_blobs(1, 1, 3);
  nca::Rng rng(5);
  std::vector<nca::StepMask> masks;
  for (int t = 0; t < config.steps; ++t) masks.push_back(nca::draw_mask(64, 64, config.fire_rate, rng));
  for (auto _ : state) {
    auto r = nca::loss_and_gradient<float>(samples[0].image, samples[0].label, params, config, masks,
                                           nca::LossKind::kSoftmax);
    benchmark::DoNotOptimize(r.loss);
  }
}

void BM_LossForward(benchmark::State& state) {
  nca::NcaConfig config;
  config.channels = static_cast<int>(state.range(0));
  config.steps = 24;
  config.update_hidden = static_cast<int>(state.range(1));
  config.classifier_hidden = 32;
  config.num_classes = 3;
  nca::retain_freed_memory();
  const auto params = nca::init_params<float>(config, 7);
  const auto samples = nca::synth_blobs(1, 1, 3);
  nca::Rng rng(5);
  std::vector<nca::StepMask> masks;
  for (int t = 0; t < config.steps; ++t) masks.push_back(nca::draw_mask(64, 64, config.fire_rate, rng));
  for (auto _ : state) {
    auto loss = nca::loss_value<float>(samples[0].image, samples[0].label, params, config, masks,
                                       nca::LossKind::kSoftmax);
    benchmark::DoNotOptimize(loss);
  }
}

}  // namespace

BENCHMARK_TEMPLATE(BM_DepthwiseConv, true)->Arg(16)->Arg(128);
BENCHMARK_TEMPLATE(BM_DepthwiseConv, false)->Arg(16)->Arg(128);
BENCHMARK_TEMPLATE(BM_PerceiveRows, true)->Arg(16)->Arg(128);
BENCHMARK_TEMPLATE(BM_PerceiveRows, false)->Arg(16)->Arg(128);
BENCHMARK_TEMPLATE(BM_PerceiveRowsBackward, true)->Arg(16)->Arg(128);
BENCHMARK_TEMPLATE(BM_PerceiveRowsBackward, false)->Arg(16)->Arg(128);
BENCHMARK_TEMPLATE(BM_Linear, true)->Args({48, 32})->Args({384, 128});
BENCHMARK_TEMPLATE(BM_Linear, false)->Args({48, 32})->Args({384, 128});
BENCHMARK_TEMPLATE(BM_LinearBackward, true)->Args({48, 32})->Args({384, 128});
BENCHMARK_TEMPLATE(BM_LinearBackward, false)->Args({48, 32})->Args({384, 128});
BENCHMARK(BM_LossForward)->Args({16, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossAndGradient)->Args({16, 32})->Args({16, 16})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
