#include <benchmark/benchmark.h>

#include <random>

#include "skim/evaluate.hpp"
#include "skim/streaming.hpp"

using namespace skim;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

SkimConfig config_for(std::int64_t full) { return full ? SkimConfig::full_size(true, 20) : SkimConfig{}; }

}  // namespace

/// One encoder stride through the float streaming engine.
static void BM_StreamFrame(benchmark::State& state) {
  const SkimConfig cfg = config_for(state.range(0));
  const SkimModel model(cfg, 1);
  auto engine = std::make_shared<const StreamingEngine<float>>(model);
  auto st = stream_init(engine);
  const auto x = noise(cfg.encoder.stride * 4096, 2);
  const std::vector<float> xf(x.begin(), x.end());
  std::size_t at = 0;
  for (auto _ : state) {
    if (at + cfg.encoder.stride > xf.size()) at = 0;
    benchmark::DoNotOptimize(stream_push<float>(st, std::span(xf).subspan(at, cfg.encoder.stride)));
    at += cfg.encoder.stride;
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_StreamFrame)->Arg(0)->Arg(1)->ArgName("full");

/// Forward LSTM over [1, T, N] on the autodiff tape.
static void BM_LstmSequence(benchmark::State& state) {
  const std::size_t T = state.range(0), N = 64, H = 128;
  Rng rng(3);
  const LstmParams p = LstmParams::init(N, H, Direction::forward, rng);
  const Tensor x({1, T, N}, noise(T * N, 4));
  for (auto _ : state) benchmark::DoNotOptimize(lstm_sequence(x, p).y);
  state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_LstmSequence)->Arg(50)->Arg(400);

/// Offline separation of one second of 8 kHz audio.
static void BM_OfflineSeparate(benchmark::State& state) {
  SkimConfig cfg;
  cfg.causal = state.range(0) != 0;
  const SkimModel model(cfg, 5);
  const auto x = noise(8000, 6);
  for (auto _ : state) benchmark::DoNotOptimize(separate_waveform(model, x));
}
BENCHMARK(BM_OfflineSeparate)->Arg(1)->Arg(0)->ArgName("causal");

BENCHMARK_MAIN();
