// Serial reference vs OpenMP kernels. Both policies produce bit-identical
// results; this only measures wall time.
#include <benchmark/benchmark.h>

#include <numeric>

#include "dyadfuse/cca.hpp"
#include "dyadfuse/synth.hpp"
#include "dyadfuse/train.hpp"

using namespace dyadfuse;

namespace {

Exec policy(const benchmark::State& state) { return state.range(0) == 0 ? Exec::serial : Exec::parallel; }

const DyadDataset& dataset() {
  static const DyadDataset ds = [] {
    SynthConfig sc;
    sc.frames = 10000;
    sc.n_listeners = 2;
    sc.seed = 1;
    return generate(sc);
  }();
  return ds;
}

void BM_SegmentalWeights(benchmark::State& state) {
  const DyadRecord& d = dataset().dyads.front();
  const SegmentPlan plan = make_segment_plan(d.speaker.frames(), 100);
  for (auto _ : state) benchmark::DoNotOptimize(segmental_weights(d.speaker, d.listener, plan, kDefaultVarianceKeep, policy(state)));
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}

void BM_BatchGradient(benchmark::State& state) {
  static const TrainConfig tc = [] {
    TrainConfig c;
    c.seed = 1;
    return c;
  }();
  static const PreparedData data = prepare_data(dataset(), tc);
  ModelConfig mc;
  mc.speaker_dim = dataset().speaker_dim();
  mc.listener_dim = dataset().listener_dim();
  mc.n_listeners = dataset().n_listeners;
  const ModelParams params = init_model(mc, tc.toggles);
  std::vector<std::size_t> batch(32);
  std::iota(batch.begin(), batch.end(), 0);
  for (auto _ : state)
    benchmark::DoNotOptimize(batch_gradient(params, mc, tc.toggles, data, batch, {}, policy(state)));
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel");
}

}  // namespace

BENCHMARK(BM_SegmentalWeights)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
