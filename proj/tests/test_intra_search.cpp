#include <doctest.h>

#include <algorithm>
#include <random>

#include "mlorq/errors.hpp"
#include "mlorq/intra_search.hpp"
#include "test_util.hpp"

using namespace mlorq;
using testutil::random_matrix;

namespace {

Candidate point(double loss, std::uint64_t mem, std::size_t rank = 0) {
  Candidate c;
  c.kind = rank ? CandidateKind::LowRankQuant : CandidateKind::QuantOnly;
  c.rank = rank;
  c.local_loss = loss;
  c.memory_bits = mem;
  return c;
}

bool tie_prefers(const Candidate& a, const Candidate& b) {
  if (a.kind != b.kind) return a.kind == CandidateKind::QuantOnly;
  if (a.kind == CandidateKind::QuantOnly) return a.bits_w < b.bits_w;
  if (a.rank != b.rank) return a.rank < b.rank;
  if (a.bits_a != b.bits_a) return a.bits_a < b.bits_a;
  return a.bits_b < b.bits_b;
}

// Independent O(n^2) dominance filter plus the documented tie collapse.
std::vector<Candidate> brute_force_front(const std::vector<Candidate>& cands) {
  std::vector<Candidate> survivors;
  for (const Candidate& c : cands) {
    bool dominated = false;
    for (const Candidate& other : cands) {
      const bool no_worse =
          other.local_loss <= c.local_loss && other.memory_bits <= c.memory_bits;
      const bool strictly_better =
          other.local_loss < c.local_loss || other.memory_bits < c.memory_bits;
      if (no_worse && strictly_better) {
        dominated = true;
        break;
      }
    }
    if (dominated) continue;
    bool replaced = false, skip = false;
    for (Candidate& kept : survivors) {
      if (kept.local_loss == c.local_loss && kept.memory_bits == c.memory_bits) {
        if (tie_prefers(c, kept)) {
          kept = c;
          replaced = true;
        }
        skip = true;
        break;
      }
    }
    (void)replaced;
    if (!skip) survivors.push_back(c);
  }
  std::sort(survivors.begin(), survivors.end(),
            [](const Candidate& a, const Candidate& b) {
              return a.memory_bits < b.memory_bits;
            });
  return survivors;
}

bool same_candidate(const Candidate& a, const Candidate& b) {
  return a.kind == b.kind && a.bits_w == b.bits_w && a.rank == b.rank &&
         a.bits_a == b.bits_a && a.bits_b == b.bits_b && a.local_loss == b.local_loss &&
         a.memory_bits == b.memory_bits;
}

}  // namespace

TEST_CASE("local loss: zero perturbation, identity weighting, direct evaluation") {
  std::mt19937_64 rng(111);
  const Matrix w = random_matrix(rng, 3, 4);
  const Matrix ones(3, 4, 1.0);
  CHECK(local_loss(w, w, ones) == 0.0);

  const Matrix w2 = random_matrix(rng, 3, 4);
  CHECK(local_loss(w, w2, ones) == doctest::Approx(frobenius_sq_diff(w, w2)).epsilon(1e-14));

  Matrix id2 = Matrix::identity(2);
  Matrix zero2(2, 2, 0.0);
  Matrix c2(2, 2);
  c2(0, 0) = 2;
  c2(0, 1) = 1;
  c2(1, 0) = 1;
  c2(1, 1) = 2;
  CHECK(local_loss(id2, zero2, c2) == 8.0);
  CHECK_THROWS_AS(local_loss(id2, Matrix(3, 2), c2), Error);
}

TEST_CASE("memory footprints follow the two closed forms") {
  CHECK(memory_quant_only(4, 6, 4) == 96);
  CHECK(memory_low_rank(4, 6, 2, 4, 2) == 56);
  Candidate q = point(0, 0);
  q.bits_w = 4;
  CHECK(memory_footprint(q, 4, 6) == 96);
  Candidate lr = point(0, 0, 2);
  lr.bits_a = 4;
  lr.bits_b = 2;
  CHECK(memory_footprint(lr, 4, 6) == 56);
  // full-rank low rank beats quant-only only when r(n_out+n_in) < n_out n_in
  CHECK(memory_low_rank(4, 6, 4, 8, 8) > memory_quant_only(4, 6, 8));
}

TEST_CASE("candidate count matches |B|(1 + |B| r_max) at stride 1") {
  std::mt19937_64 rng(113);
  Layer layer;
  layer.name = "l";
  layer.weight = random_matrix(rng, 12, 10);
  layer.bias.assign(12, 0.0);
  layer.compressible = true;

  const HessianWeights hw = make_hessian_weights(Matrix(12, 10, 1.0));
  const BitSet& bits = default_bitset();
  const LayerPlan plan = build_layer_plan(layer, 0, hw, bits, true);
  const auto cands = enumerate_candidates(layer, plan, hw, bits, 1);
  CHECK(cands.size() == 255);
  CHECK(full_candidate_count(5, 10) == 255);

  // rank schedule with a stride keeps 1 and r_max
  const auto sched = rank_schedule(10, 4);
  CHECK(sched == std::vector<std::size_t>{1, 5, 9, 10});
}

TEST_CASE("incremental low-rank losses match direct reconstruction") {
  std::mt19937_64 rng(127);
  Layer layer;
  layer.name = "l";
  layer.weight = random_matrix(rng, 9, 7);
  layer.bias.assign(9, 0.0);
  layer.compressible = true;

  Matrix craw = random_matrix(rng, 9, 7);
  for (std::size_t i = 0; i < craw.size(); ++i) craw.data()[i] = std::abs(craw.data()[i]) + 0.05;
  const HessianWeights hw = make_hessian_weights(std::move(craw));
  const BitSet bits = BitSet::parse("2,4,8");
  const LayerPlan plan = build_layer_plan(layer, 0, hw, bits, true);
  const auto cands = enumerate_candidates(layer, plan, hw, bits, 1);

  for (const Candidate& c : cands) {
    const Matrix direct = reconstruct_candidate(plan, layer, c);
    const double expect = local_loss(layer.weight, direct, hw.C);
    CHECK(c.local_loss == doctest::Approx(expect).epsilon(1e-9));
    CHECK(c.memory_bits == memory_footprint(c, 9, 7));
  }

  // the full-rank incremental reconstruction agrees with the direct product
  auto full = std::find_if(cands.begin(), cands.end(), [&](const Candidate& c) {
    return c.kind == CandidateKind::LowRankQuant && c.rank == 7 && c.bits_a == 8 &&
           c.bits_b == 8;
  });
  REQUIRE(full != cands.end());
  auto [aq, bq] = quantized_factors(plan, *full);
  const Matrix prod = matmul(aq, bq);
  const Matrix direct = reconstruct_candidate(plan, layer, *full);
  for (std::size_t i = 0; i < prod.size(); ++i)
    CHECK(prod.data()[i] == doctest::Approx(direct.data()[i]).epsilon(1e-9));
}

TEST_CASE("non-compressible layers only enumerate quantization candidates") {
  std::mt19937_64 rng(131);
  Layer layer;
  layer.name = "l";
  layer.weight = random_matrix(rng, 5, 5);
  layer.bias.assign(5, 0.0);
  layer.compressible = false;

  const HessianWeights hw = make_hessian_weights(Matrix(5, 5, 1.0));
  const LayerPlan plan = build_layer_plan(layer, 0, hw, default_bitset(), true);
  const auto cands = enumerate_candidates(layer, plan, hw, default_bitset(), 1);
  CHECK(cands.size() == 5);
  for (const Candidate& c : cands) CHECK(c.kind == CandidateKind::QuantOnly);
}

TEST_CASE("pareto front by inspection") {
  std::vector<Candidate> cands = {point(1.0, 10), point(2.0, 5), point(3.0, 6)};
  const auto front = pareto_front(cands);
  REQUIRE(front.size() == 2);
  CHECK(front[0].memory_bits == 5);
  CHECK(front[0].local_loss == 2.0);
  CHECK(front[1].memory_bits == 10);
  CHECK(front[1].local_loss == 1.0);
}

TEST_CASE("identical candidates collapse to a singleton front") {
  std::vector<Candidate> cands(7, point(1.5, 64, 3));
  for (std::size_t i = 0; i < cands.size(); ++i) cands[i].bits_a = 8 - static_cast<int>(i);
  const auto front = pareto_front(cands);
  REQUIRE(front.size() == 1);
  CHECK(front[0].bits_a == 2);  // smallest b_A wins the tie
  CHECK_THROWS_AS(pareto_front({}), Error);
}

TEST_CASE("random candidate sets match the brute-force dominance filter") {
  // coarse loss/memory grids force plenty of exact ties, and both kinds mix
  // so the tie collapse is exercised across them
  std::mt19937_64 rng(137);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Candidate> cands;
    std::uniform_int_distribution<std::uint64_t> mem(1, 40);
    std::uniform_int_distribution<int> loss(1, 40);
    const std::size_t n = 1 + rng() % 500;
    for (std::size_t i = 0; i < n; ++i) {
      const bool low_rank = rng() % 4 != 0;
      Candidate c = point(static_cast<double>(loss(rng)), mem(rng),
                          low_rank ? 1 + rng() % 8 : 0);
      if (low_rank) {
        c.bits_a = 2 + static_cast<int>(rng() % 7);
        c.bits_b = 2 + static_cast<int>(rng() % 7);
      } else {
        c.bits_w = 2 + static_cast<int>(rng() % 7);
      }
      cands.push_back(c);
    }
    const auto fast = pareto_front(cands);
    const auto brute = brute_force_front(cands);
    REQUIRE(fast.size() == brute.size());
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(same_candidate(fast[i], brute[i]));
  }
}

TEST_CASE("front properties: membership, no mutual domination, idempotence") {
  std::mt19937_64 rng(139);
  std::vector<Candidate> cands;
  std::uniform_real_distribution<double> loss(0.0, 10.0);
  std::uniform_int_distribution<std::uint64_t> mem(1, 1000);
  for (int i = 0; i < 300; ++i) cands.push_back(point(loss(rng), mem(rng)));

  const auto front = pareto_front(cands);
  for (const Candidate& f : front) {
    CHECK(std::any_of(cands.begin(), cands.end(),
                      [&](const Candidate& c) { return same_candidate(c, f); }));
  }
  for (std::size_t i = 0; i + 1 < front.size(); ++i) {
    CHECK(front[i].memory_bits < front[i + 1].memory_bits);
    CHECK(front[i].local_loss > front[i + 1].local_loss);
  }
  const auto again = pareto_front(front);
  REQUIRE(again.size() == front.size());
  for (std::size_t i = 0; i < front.size(); ++i) CHECK(same_candidate(again[i], front[i]));
}
