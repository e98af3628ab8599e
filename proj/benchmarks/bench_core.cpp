#include <benchmark/benchmark.h>

#include "arblab/analysis.hpp"
#include "arblab/loss.hpp"
#include "arblab/model.hpp"
#include "arblab/numkit.hpp"
#include "arblab/trainer.hpp"

namespace {

using namespace arblab;

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = gaussian_matrix(rng, n, n);
  const Matrix b = gaussian_matrix(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_QrOrthonormal(benchmark::State& state) {
  Rng rng(2);
  const Matrix a = gaussian_matrix(rng, 64, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(qr_orthonormal(a));
}
BENCHMARK(BM_QrOrthonormal)->Arg(10)->Arg(64);

void BM_ClassifierGradient(benchmark::State& state) {
  const auto kind = state.range(0) == 0 ? LossKind::CrossEntropy : LossKind::Arb;
  Rng rng(3);
  const std::size_t b = 128, c = 10, d = 64;
  const Matrix h = gaussian_matrix(rng, b, d);
  const Matrix w = gaussian_matrix(rng, c, d);
  std::vector<int> y(b);
  for (auto& v : y) v = static_cast<int>(rng.below(c));
  const auto counts = ClassCounts::from_labels(y, c);
  for (auto _ : state) benchmark::DoNotOptimize(classifier_gradient(kind, h, y, w, counts));
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_ClassifierGradient)->Arg(0)->Arg(1);

void BM_TrainEpoch(benchmark::State& state) {
  Rng rng(4);
  const auto counts = longtail_counts({100.0, 500}, 10);
  const Dataset train_set = synth_gaussian_mixture(rng, 10, 32, counts, 3.0);
  TrainOptions opt;
  opt.loss = LossKind::Arb;
  opt.hidden = {64};
  opt.schedule = Schedule{Schedule::Kind::Constant, 0.05, {}, 0.1, 0.0, 1};
  for (auto _ : state) benchmark::DoNotOptimize(train(train_set, train_set, opt));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_PropositionSweep(benchmark::State& state) {
  PropositionScenario sc;
  sc.seeds = 10;
  for (auto _ : state) benchmark::DoNotOptimize(check_proposition_1(sc));
}
BENCHMARK(BM_PropositionSweep)->Unit(benchmark::kMillisecond);

}  // namespace

// The distro benchmark_main archive is LTO bytecode from another compiler
// release, so the entry point is defined here.
BENCHMARK_MAIN();
