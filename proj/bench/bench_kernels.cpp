// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include "kmpc/kernels.hpp"
#include "kmpc/koopman.hpp"
#include "kmpc/plant.hpp"

namespace {

using namespace kmpc;

// Snapshot-sized inputs: P lifted coordinates by M samples.
void gram_args(benchmark::internal::Benchmark* b) {
  for (int P : {13, 104, 650}) b->Args({P, 12000});
}

void BM_GramSerial(benchmark::State& st) {
  std::srand(1);
  Eigen::MatrixXd D0 = Eigen::MatrixXd::Random(st.range(0), st.range(1));
  Eigen::MatrixXd D1 = Eigen::MatrixXd::Random(st.range(0), st.range(1));
  for (auto _ : st) benchmark::DoNotOptimize(gram_serial(D0, D1));
}
BENCHMARK(BM_GramSerial)->Apply(gram_args)->Unit(benchmark::kMillisecond);

void BM_GramParallel(benchmark::State& st) {
  std::srand(1);
  Eigen::MatrixXd D0 = Eigen::MatrixXd::Random(st.range(0), st.range(1));
  Eigen::MatrixXd D1 = Eigen::MatrixXd::Random(st.range(0), st.range(1));
  for (auto _ : st) benchmark::DoNotOptimize(gram_parallel(D0, D1));
}
BENCHMARK(BM_GramParallel)->Apply(gram_args)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_Dataset(benchmark::State& st) {
  const Execution exec = st.range(0) ? Execution::Parallel : Execution::Serial;
  for (auto _ : st)
    benchmark::DoNotOptimize(generate_training_dataset(PlantParams{}, GaitPhaseSchedule{},
                                                       ReferenceParams{}, ProtocolConfig{}, 1, exec));
}
BENCHMARK(BM_Dataset)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_Snapshots(benchmark::State& st) {
  static const TrajectoryDataset ds = generate_training_dataset(
      PlantParams{}, GaitPhaseSchedule{}, ReferenceParams{}, ProtocolConfig{}, 1);
  const Execution exec = st.range(0) ? Execution::Parallel : Execution::Serial;
  ObservableDictionary d = ObservableDictionary::make("custom", 8);
  for (auto _ : st) benchmark::DoNotOptimize(build_snapshots(ds, d, 0, exec));
}
BENCHMARK(BM_Snapshots)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
