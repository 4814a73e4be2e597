#include "mlorq/intra_search.hpp"

#include <algorithm>

#include "mlorq/errors.hpp"

namespace mlorq {

std::uint64_t memory_quant_only(std::size_t n_out, std::size_t n_in, int bits_w) {
  return static_cast<std::uint64_t>(n_out) * n_in * static_cast<std::uint64_t>(bits_w);
}

std::uint64_t memory_low_rank(std::size_t n_out, std::size_t n_in, std::size_t rank,
                              int bits_a, int bits_b) {
  return static_cast<std::uint64_t>(rank) *
         (static_cast<std::uint64_t>(n_out) * bits_a +
          static_cast<std::uint64_t>(n_in) * bits_b);
}

std::uint64_t memory_footprint(const Candidate& c, std::size_t n_out, std::size_t n_in) {
  if (c.kind == CandidateKind::QuantOnly) return memory_quant_only(n_out, n_in, c.bits_w);
  return memory_low_rank(n_out, n_in, c.rank, c.bits_a, c.bits_b);
}

double local_loss(const Matrix& w, const Matrix& w_tilde, const Matrix& c) {
  if (!w.same_shape(w_tilde) || !w.same_shape(c))
    throw Error(ErrorCode::ShapeMismatch, "local_loss: shapes differ");
  double acc = 0.0;
  const double* pw = w.data();
  const double* pt = w_tilde.data();
  const double* pc = c.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = pc[i] * (pw[i] - pt[i]);
    acc += d * d;
  }
  return acc;
}

std::uint64_t full_candidate_count(std::size_t bitset_size, std::size_t r_max) {
  const std::uint64_t nb = bitset_size;
  return nb * (1 + nb * static_cast<std::uint64_t>(r_max));
}

std::vector<std::size_t> rank_schedule(std::size_t r_max, std::size_t stride) {
  if (stride == 0) stride = 1;
  std::vector<std::size_t> ranks;
  for (std::size_t r = 1; r <= r_max; r += stride) ranks.push_back(r);
  if (ranks.back() != r_max) ranks.push_back(r_max);
  return ranks;
}

LayerPlan build_layer_plan(const Layer& layer, std::size_t layer_index,
                           const HessianWeights& hessian, const BitSet& bitset,
                           bool allow_low_rank, std::span<const double> grid) {
  LayerPlan plan;
  plan.layer_index = layer_index;
  plan.layer_name = layer.name;
  plan.n_out = layer.n_out();
  plan.n_in = layer.n_in();
  plan.low_rank_enabled = allow_low_rank && layer.compressible;

  for (int b : bitset.bits)
    plan.params_w[b] = search_params_hmse(layer.weight, hessian.C, b, grid);

  if (plan.low_rank_enabled) {
    plan.decomp = hessian_weighted_decompose(layer.weight, hessian.Q);
    for (int b : bitset.bits) {
      plan.params_a[b] = search_params_A(plan.decomp.A, plan.decomp.B, hessian.C, b, grid);
      plan.params_b[b] = search_params_B(plan.decomp.B, b, grid);
    }
  }
  return plan;
}

Matrix reconstruct_candidate(const LayerPlan& plan, const Layer& layer, const Candidate& c) {
  if (c.kind == CandidateKind::QuantOnly)
    return quantize_uniform(layer.weight, plan.params_w.at(c.bits_w));
  auto [a, b] = quantized_factors(plan, c);
  return matmul(a, b);
}

std::pair<Matrix, Matrix> quantized_factors(const LayerPlan& plan, const Candidate& c) {
  if (c.kind != CandidateKind::LowRankQuant)
    throw Error(ErrorCode::InvalidArgument, "candidate is not low-rank");
  auto [a, b] = truncate(plan.decomp, c.rank);
  // Per-row params of the full factors restrict to the truncated ones:
  // A keeps all rows, B keeps the leading r rows.
  QuantParams pa = plan.params_a.at(c.bits_a);
  QuantParams pb = plan.params_b.at(c.bits_b);
  pb.scales.resize(c.rank);
  pb.zero_points.resize(c.rank);
  return {quantize_uniform(a, pa), quantize_uniform(b, pb)};
}

std::vector<Candidate> enumerate_candidates(const Layer& layer, const LayerPlan& plan,
                                            const HessianWeights& hessian,
                                            const BitSet& bitset, std::size_t rank_stride) {
  const std::size_t n_out = layer.n_out(), n_in = layer.n_in();
  std::vector<Candidate> out;

  for (int b : bitset.bits) {
    Candidate c;
    c.kind = CandidateKind::QuantOnly;
    c.bits_w = b;
    c.layer_index = plan.layer_index;
    const Matrix w_tilde = quantize_uniform(layer.weight, plan.params_w.at(b));
    c.local_loss = local_loss(layer.weight, w_tilde, hessian.C);
    c.memory_bits = memory_quant_only(n_out, n_in, b);
    out.push_back(c);
  }

  if (!plan.low_rank_enabled) return out;

  const std::size_t r_max = plan.decomp.r_max();
  const std::vector<std::size_t> ranks = rank_schedule(r_max, rank_stride);

  for (int ba : bitset.bits) {
    const Matrix a_q = quantize_uniform(plan.decomp.A, plan.params_a.at(ba));
    for (int bb : bitset.bits) {
      const Matrix b_q = quantize_uniform(plan.decomp.B, plan.params_b.at(bb));

      // residual = W - A~(:, :r) B~(:r, :), updated one rank at a time.
      Matrix residual = layer.weight;
      std::size_t next = 0;
      for (std::size_t r = 1; r <= r_max && next < ranks.size(); ++r) {
        const double* brow = b_q.row(r - 1);
        for (std::size_t i = 0; i < n_out; ++i) {
          const double a_ir = a_q(i, r - 1);
          if (a_ir == 0.0) continue;
          double* res_row = residual.row(i);
          for (std::size_t j = 0; j < n_in; ++j) res_row[j] -= a_ir * brow[j];
        }
        if (r != ranks[next]) continue;
        ++next;

        Candidate c;
        c.kind = CandidateKind::LowRankQuant;
        c.rank = r;
        c.bits_a = ba;
        c.bits_b = bb;
        c.layer_index = plan.layer_index;
        double loss = 0.0;
        for (std::size_t i = 0; i < residual.size(); ++i) {
          const double d = hessian.C.data()[i] * residual.data()[i];
          loss += d * d;
        }
        c.local_loss = loss;
        c.memory_bits = memory_low_rank(n_out, n_in, r, ba, bb);
        out.push_back(c);
      }
    }
  }
  return out;
}

namespace {

// Total order for exact (loss, memory) ties: smaller rank, smaller b_A,
// QuantOnly ahead of LowRankQuant.
bool tie_before(const Candidate& a, const Candidate& b) {
  if (a.kind != b.kind) return a.kind == CandidateKind::QuantOnly;
  if (a.kind == CandidateKind::QuantOnly) return a.bits_w < b.bits_w;
  if (a.rank != b.rank) return a.rank < b.rank;
  if (a.bits_a != b.bits_a) return a.bits_a < b.bits_a;
  return a.bits_b < b.bits_b;
}

}  // namespace

std::vector<Candidate> pareto_front(const std::vector<Candidate>& candidates) {
  if (candidates.empty())
    throw Error(ErrorCode::EmptyInput, "pareto_front: no candidates");

  std::vector<Candidate> sorted = candidates;
  std::sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    if (a.memory_bits != b.memory_bits) return a.memory_bits < b.memory_bits;
    if (a.local_loss != b.local_loss) return a.local_loss < b.local_loss;
    return tie_before(a, b);
  });

  std::vector<Candidate> front;
  for (const Candidate& c : sorted) {
    if (!front.empty()) {
      const Candidate& last = front.back();
      // Anything at equal memory after the first is dominated or a tie-loser;
      // anything with loss >= the running minimum is dominated.
      if (c.memory_bits == last.memory_bits || c.local_loss >= last.local_loss) continue;
    }
    front.push_back(c);
  }
  return front;
}

}  // namespace mlorq
