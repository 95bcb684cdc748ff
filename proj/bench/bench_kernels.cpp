// Serial reference kernels vs the OpenMP versions, over batch size.

#include <random>

#include <benchmark/benchmark.h>

#include "mmtta/kernels.hpp"
#include "mmtta/streaming_update.hpp"

namespace {

using namespace mmtta;

constexpr Index kDim = 32;
constexpr int kClasses = 10;

RowMatrix random_rows(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  RowMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

RowMatrix random_simplex(Index rows, Index cols, std::uint64_t seed) {
  RowMatrix m = random_rows(rows, cols, seed).array().exp();
  for (Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

PerspectiveBank random_bank() {
  PerspectiveBank bank;
  bank.dim = kDim;
  bank.num_classes = kClasses;
  const RowMatrix means = random_rows(kClasses, kDim, 1);
  for (int c = 0; c < kClasses; ++c) {
    const RowMatrix a = random_rows(kDim, kDim, 100 + c);
    Matrix cov = Matrix(a.transpose() * a) / kDim + Matrix::Identity(kDim, kDim);
    bank.stats.emplace_back(kDim);
    bank.params.push_back(
        ClassGaussian::make(1.0 / kClasses, std::log(1.0 / kClasses), means.row(c).transpose(), cov));
  }
  return bank;
}

template <RowMatrix (*Fn)(const RowMatrix&, const PerspectiveBank&)>
void BM_ScoreBatch(benchmark::State& state) {
  const PerspectiveBank bank = random_bank();
  const RowMatrix z = random_rows(state.range(0), kDim, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(z, bank));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <std::vector<SufficientStats> (*Fn)(const RowMatrix&, const RowMatrix&)>
void BM_AccumulateDeltas(benchmark::State& state) {
  const RowMatrix z = random_rows(state.range(0), kDim, 7);
  const RowMatrix resp = random_simplex(state.range(0), kClasses, 8);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(z, resp));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <Vector (*Fn)(const RowMatrix&, const RowMatrix&)>
void BM_SklRows(benchmark::State& state) {
  const RowMatrix p = random_simplex(state.range(0), kClasses, 3);
  const RowMatrix q = random_simplex(state.range(0), kClasses, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(p, q));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <ContrastiveTerms (*Fn)(const RowMatrix&, const RowMatrix&, const std::vector<AnchorSide>&,
                                 double)>
void BM_Contrastive(benchmark::State& state) {
  const Index b = state.range(0);
  const RowMatrix z1 = random_rows(b, kDim, 5);
  const RowMatrix z2 = random_rows(b, kDim, 6);
  std::vector<AnchorSide> anchors(b);
  for (Index i = 0; i < b; ++i) anchors[i] = i % 2 ? AnchorSide::M2 : AnchorSide::M1;
  for (auto _ : state) benchmark::DoNotOptimize(Fn(z1, z2, anchors, 0.05));
  state.SetItemsProcessed(state.iterations() * b);
}

}  // namespace

BENCHMARK(BM_ScoreBatch<reference::score_batch>)->Name("score_batch/reference")->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK(BM_ScoreBatch<kernels::score_batch>)->Name("score_batch/omp")->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK(BM_AccumulateDeltas<reference::accumulate_deltas>)->Name("accumulate_deltas/reference")->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK(BM_AccumulateDeltas<kernels::accumulate_deltas>)->Name("accumulate_deltas/omp")->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK(BM_SklRows<reference::skl_rows>)->Name("skl_rows/reference")->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK(BM_SklRows<kernels::skl_rows>)->Name("skl_rows/omp")->RangeMultiplier(4)->Range(16, 1024);
BENCHMARK(BM_Contrastive<reference::contrastive_terms>)->Name("contrastive/reference")->RangeMultiplier(4)->Range(16, 256);
BENCHMARK(BM_Contrastive<kernels::contrastive_terms>)->Name("contrastive/omp")->RangeMultiplier(4)->Range(16, 256);

BENCHMARK_MAIN();
