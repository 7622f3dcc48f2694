#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

#include "rarecp/config.hpp"
#include "rarecp/conformal.hpp"
#include "rarecp/harness.hpp"
#include "rarecp/mixture.hpp"
#include "rarecp/training.hpp"

using namespace rarecp;

namespace {

std::vector<CalibrationEntry> random_entries(std::size_t n, std::size_t p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<CalibrationEntry> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].context.features.resize(p);
    for (auto& v : out[i].context.features) v = n01(rng);
    out[i].residual = n01(rng);
    out[i].time_index = static_cast<std::int64_t>(i);
  }
  return out;
}

void BM_WeightedQuantile(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  std::exponential_distribution<double> e1;
  std::vector<double> r(n), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = n01(rng);
    w[i] = e1(rng);
  }
  const auto s = WeightedSupport::normalized(r, w);
  for (auto _ : state) benchmark::DoNotOptimize(weighted_quantile(s, 0.9));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_WeightedQuantile)->RangeMultiplier(4)->Range(16, 16384)->Complexity();

// one test-time interval: every expert re-keys the whole store
void BM_RareCpInterval(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const RunConfig rc;
  const std::size_t p = rc.context.dim();
  const auto entries = random_entries(n, p, 2);
  CalibrationStore store(n);
  for (const auto& e : entries) store.update(e);
  const auto desc = compute_descriptor(entries, 0);
  RareCpModel model;
  for (std::size_t m = 0; m < rc.train.n_experts; ++m)
    model.experts.push_back(HypernetworkParams::init(rc.train.expert, p, 1, 10 + m));
  model.gate = GateParams::init(rc.train.gate, p, rc.train.n_experts, 1, 20);
  const auto query = random_entries(1, p, 3)[0].context;
  for (auto _ : state) benchmark::DoNotOptimize(rarecp_interval(0.0, store, model, query, desc, 0.2));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_RareCpInterval)->RangeMultiplier(4)->Range(64, 4096)->Complexity()->Unit(benchmark::kMillisecond);

// one Adam step of expert training at the default sizes
void BM_ExpertTrainingStep(benchmark::State& state) {
  SynthConfig sc;
  sc.regimes = {RegimeSpec{0.0, 1.0}, RegimeSpec{20.0, 5.0}};
  sc.lengths.assign(20, 200);
  sc.seed = 4;
  const auto synth = synth_regime_series(sc);
  const RunConfig rc;
  const auto ds = make_train_dataset(synth.series, rc.split, NaiveForecast{}, rc.context, 0, false);
  std::vector<PreparedDataset> prepared{prepare_dataset(ds, true)};
  auto cfg = rc.train;
  cfg.batch_size = static_cast<std::size_t>(state.range(0));
  const auto bank = fit_teacher_bank(prepared, [&] {
    auto c = cfg;
    c.teacher_epochs = 1;
    return c;
  }());
  auto expert = HypernetworkParams::init(cfg.expert, prepared[0].contexts.cols(), 1, 5);
  grad::Adam opt({cfg.student_lr});
  Minibatch mb(1);
  mb[0].resize(std::min(cfg.batch_size, prepared[0].size()));
  std::iota(mb[0].begin(), mb[0].end(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(expert_training_step(expert, opt, prepared, mb, bank, 0, cfg, 0.01));
}
BENCHMARK(BM_ExpertTrainingStep)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
