#include <benchmark/benchmark.h>

#include "panelbc/bias.hpp"
#include "panelbc/jackknife.hpp"
#include "panelbc/simlab.hpp"
#include "panelbc/two_way.hpp"

using namespace panelbc;

namespace {

PanelData panel(std::size_t N, std::size_t T) {
  const McDesign d = calibrated_logit_design(N, T, 3, 1);
  Rng rng(d.seed);
  return simulate_panel(d, rng).data;
}

void BM_Project(benchmark::State& state) {
  const PanelData d = panel(static_cast<std::size_t>(state.range(0)), 9);
  const PanelIndex idx = build_index(d);
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d.size()), 0.2);
  for (auto _ : state) benchmark::DoNotOptimize(two_way_project(d.x(), w, idx));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(d.size()));
}
BENCHMARK(BM_Project)->Arg(200)->Arg(664)->Arg(2000);

void BM_FitLogit(benchmark::State& state) {
  const PanelData d = panel(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  const auto logit = make_family("logit");
  for (auto _ : state) benchmark::DoNotOptimize(fit(d, *logit));
}
BENCHMARK(BM_FitLogit)->Args({200, 9})->Args({664, 9})->Args({664, 30})->Unit(benchmark::kMillisecond);

void BM_Abc(benchmark::State& state) {
  const PanelData d = panel(664, 9);
  const auto logit = make_family("logit");
  const FitResult fe = fit(d, *logit);
  for (auto _ : state) benchmark::DoNotOptimize(abc(d, *logit, fe));
}
BENCHMARK(BM_Abc)->Unit(benchmark::kMillisecond);

void BM_Sbc(benchmark::State& state) {
  const PanelData d = panel(664, 9);
  const auto logit = make_family("logit");
  const FitResult fe = fit(d, *logit);
  JackknifeOptions o;
  o.splits = static_cast<std::size_t>(state.range(0));
  o.on_degenerate = JackknifeOptions::OnDegenerate::drop;
  for (auto _ : state) benchmark::DoNotOptimize(sbc(d, *logit, fe, o));
}
BENCHMARK(BM_Sbc)->Arg(5)->Arg(20)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
