#ifndef MLORQ_INTRA_SEARCH_HPP
#define MLORQ_INTRA_SEARCH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mlorq/lowrank.hpp"
#include "mlorq/matrix.hpp"
#include "mlorq/model.hpp"
#include "mlorq/netsim.hpp"
#include "mlorq/quantizer.hpp"

namespace mlorq {

enum class CandidateKind { QuantOnly, LowRankQuant };

/// One compression option for one layer. Quantization parameter vectors live
/// in the owning LayerPlan (frozen per bit-width), not in the candidate.
struct Candidate {
  CandidateKind kind = CandidateKind::QuantOnly;
  int bits_w = 0;        // QuantOnly
  std::size_t rank = 0;  // LowRankQuant
  int bits_a = 0;
  int bits_b = 0;
  double local_loss = 0.0;
  std::uint64_t memory_bits = 0;
  std::size_t layer_index = 0;
};

std::uint64_t memory_quant_only(std::size_t n_out, std::size_t n_in, int bits_w);
std::uint64_t memory_low_rank(std::size_t n_out, std::size_t n_in, std::size_t rank,
                              int bits_a, int bits_b);
std::uint64_t memory_footprint(const Candidate& c, std::size_t n_out, std::size_t n_in);

/// ||C o (W - W~)||_F^2
double local_loss(const Matrix& w, const Matrix& w_tilde, const Matrix& c);

/// Full candidate count |B| (1 + |B| r_max) of the unstrided search space.
std::uint64_t full_candidate_count(std::size_t bitset_size, std::size_t r_max);

/// Ranks enumerated for a layer: {1, 1+stride, ...} plus r_max.
std::vector<std::size_t> rank_schedule(std::size_t r_max, std::size_t stride);

/// Per-layer frozen search state: the decomposition plus quantization
/// parameters per bit-width for W, A and B.
struct LayerPlan {
  std::size_t layer_index = 0;
  std::string layer_name;
  std::size_t n_out = 0;
  std::size_t n_in = 0;
  bool low_rank_enabled = false;
  Decomposition decomp;                // empty when !low_rank_enabled
  std::map<int, QuantParams> params_w;
  std::map<int, QuantParams> params_a;
  std::map<int, QuantParams> params_b;
};

LayerPlan build_layer_plan(const Layer& layer, std::size_t layer_index,
                           const HessianWeights& hessian, const BitSet& bitset,
                           bool allow_low_rank,
                           std::span<const double> grid = percentile_grid());

/// Effective compressed weight of a candidate (for metric evaluation).
Matrix reconstruct_candidate(const LayerPlan& plan, const Layer& layer, const Candidate& c);

/// Quantized factors of a low-rank candidate at its rank.
std::pair<Matrix, Matrix> quantized_factors(const LayerPlan& plan, const Candidate& c);

/// One QuantOnly candidate per bit-width, plus one LowRankQuant candidate per
/// (b_A, b_B, r) over the rank schedule. Low-rank losses are accumulated
/// incrementally by rank-1 updates; parameters stay frozen across ranks.
std::vector<Candidate> enumerate_candidates(const Layer& layer, const LayerPlan& plan,
                                            const HessianWeights& hessian,
                                            const BitSet& bitset, std::size_t rank_stride);

/// Non-dominated subset under (local_loss, memory_bits), both minimized,
/// sorted by memory ascending. Exact ties collapse deterministically: smaller
/// rank, then smaller b_A, then QuantOnly ahead of LowRankQuant.
std::vector<Candidate> pareto_front(const std::vector<Candidate>& candidates);

}  // namespace mlorq

#endif  // MLORQ_INTRA_SEARCH_HPP
