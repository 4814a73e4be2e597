#include <benchmark/benchmark.h>

#include <random>

#include "mlorq/inter_search.hpp"
#include "mlorq/intra_search.hpp"
#include "mlorq/lowrank.hpp"
#include "mlorq/quantizer.hpp"
#include "mlorq/svd.hpp"

using namespace mlorq;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void bm_svd(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_matrix(rng, n, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(svd(w));
  }
}
BENCHMARK(bm_svd)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void bm_hmse_search(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_matrix(rng, n, n);
  Matrix c = random_matrix(rng, n, n);
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = std::abs(c.data()[i]);
  for (auto _ : state) {
    benchmark::DoNotOptimize(search_params_hmse(w, c, 4));
  }
}
BENCHMARK(bm_hmse_search)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void bm_quantize(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix w = random_matrix(rng, n, n);
  const QuantParams p = percentile_params(w, 1.0, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(quantize_uniform(w, p));
  }
}
BENCHMARK(bm_quantize)->Arg(256)->Arg(512)->Unit(benchmark::kMicrosecond);

void bm_pareto_front(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::vector<Candidate> cands;
  std::uniform_real_distribution<double> loss(0.0, 100.0);
  for (int i = 0; i < state.range(0); ++i) {
    Candidate c;
    c.kind = CandidateKind::LowRankQuant;
    c.rank = 1 + rng() % 64;
    c.bits_a = 2 + static_cast<int>(rng() % 7);
    c.bits_b = 2 + static_cast<int>(rng() % 7);
    c.local_loss = loss(rng);
    c.memory_bits = 1 + rng() % 100000;
    cands.push_back(c);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(pareto_front(cands));
  }
}
BENCHMARK(bm_pareto_front)->Arg(1000)->Arg(10000)->Unit(benchmark::kMicrosecond);

void bm_knapsack(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const std::size_t layers = static_cast<std::size_t>(state.range(0));
  std::vector<std::vector<Candidate>> fronts(layers);
  MetricTable table;
  table.layers.resize(layers);
  std::uniform_real_distribution<double> phi(0.0, 1.0);
  for (std::size_t l = 0; l < layers; ++l)
    for (int c = 0; c < 50; ++c) {
      Candidate cand;
      cand.kind = CandidateKind::QuantOnly;
      cand.bits_w = 2;
      cand.memory_bits = 1024 * (1 + rng() % 512);
      fronts[l].push_back(cand);
      table.layers[l].push_back({phi(rng), false});
    }
  std::uint64_t budget = 0;
  for (const auto& f : fronts) budget += f[0].memory_bits * 2;
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_allocation(fronts, table, budget, 1024));
  }
}
BENCHMARK(bm_knapsack)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
