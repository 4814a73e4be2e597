#include "mlorq/inter_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlorq/errors.hpp"

namespace mlorq {

double candidate_network_nmse(const Model& model, const ForwardTrace& trace,
                              std::size_t layer_index, const Matrix& replacement) {
  const Matrix replaced = output_with_layer_replaced(model, trace, layer_index, replacement);
  const double signal = frobenius_sq(trace.output);
  if (signal == 0.0)
    throw Error(ErrorCode::ZeroSignal, "float network output is identically zero");
  return frobenius_sq_diff(trace.output, replaced) / signal;
}

namespace {

struct Group {
  std::vector<std::size_t> members;  // candidate indices, front order (memory asc)
};

std::vector<std::size_t> pick_anchors(const std::vector<Candidate>& front,
                                      const std::vector<std::size_t>& members,
                                      std::size_t k_inf) {
  const std::uint64_t mem_min = front[members.front()].memory_bits;
  const std::uint64_t mem_max = front[members.back()].memory_bits;
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < k_inf; ++i) {
    const double target =
        static_cast<double>(mem_min) +
        static_cast<double>(mem_max - mem_min) * static_cast<double>(i) /
            static_cast<double>(k_inf - 1);
    std::size_t best = members.front();
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t m : members) {
      const double dist = std::abs(static_cast<double>(front[m].memory_bits) - target);
      if (dist < best_dist) {
        best_dist = dist;
        best = m;
      }
    }
    anchors.push_back(best);
  }
  anchors.push_back(members.front());
  anchors.push_back(members.back());
  std::sort(anchors.begin(), anchors.end());
  anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());
  return anchors;
}

}  // namespace

MetricTable interpolate_metric_table(const std::vector<std::vector<Candidate>>& fronts,
                                     std::size_t k_inf, const ExactEvaluator& evaluate) {
  if (k_inf < 2)
    throw Error(ErrorCode::InvalidArgument, "k_inf must be at least 2");

  MetricTable table;
  table.layers.resize(fronts.size());
  for (std::size_t l = 0; l < fronts.size(); ++l) {
    const std::vector<Candidate>& front = fronts[l];
    std::vector<MetricEntry>& entries = table.layers[l];
    entries.assign(front.size(), MetricEntry{});

    std::map<std::pair<int, int>, Group> groups;
    for (std::size_t i = 0; i < front.size(); ++i) {
      const Candidate& c = front[i];
      if (c.kind == CandidateKind::QuantOnly) {
        entries[i].phi = evaluate(l, c);
      } else {
        groups[{c.bits_a, c.bits_b}].members.push_back(i);
      }
    }

    for (auto& [bits, group] : groups) {
      const std::vector<std::size_t>& members = group.members;
      if (members.size() <= k_inf) {
        for (std::size_t m : members) entries[m].phi = evaluate(l, front[m]);
        continue;
      }

      const std::vector<std::size_t> anchors = pick_anchors(front, members, k_inf);
      for (std::size_t a : anchors) entries[a].phi = evaluate(l, front[a]);

      // Anchors in memory order; within a front the loss is strictly
      // decreasing along that order, so they bracket every member's loss.
      for (std::size_t m : members) {
        if (std::binary_search(anchors.begin(), anchors.end(), m)) continue;
        auto hi_it = std::upper_bound(anchors.begin(), anchors.end(), m);
        const std::size_t low = *(hi_it - 1);
        const std::size_t high = *hi_it;
        const double loss_low = front[low].local_loss;
        const double loss_high = front[high].local_loss;
        MetricEntry& e = entries[m];
        e.interpolated = true;
        if (loss_high == loss_low) {
          e.phi = entries[low].phi;
          continue;
        }
        const double beta = (front[m].local_loss - loss_low) / (loss_high - loss_low);
        e.phi = entries[low].phi * (1.0 - beta) + entries[high].phi * beta;
      }
    }
  }
  return table;
}

std::uint64_t budget_from_avg_bits(double avg_bits, const Model& model) {
  if (avg_bits <= 0.0)
    throw Error(ErrorCode::InvalidArgument, "avg-bits must be positive");
  double params = 0.0;
  for (const Layer& layer : model.layers)
    if (layer.compressible)
      params += static_cast<double>(layer.n_out()) * static_cast<double>(layer.n_in());
  return static_cast<std::uint64_t>(std::llround(avg_bits * params));
}

AllocationSolution solve_allocation(const std::vector<std::vector<Candidate>>& fronts,
                                    const MetricTable& table, std::uint64_t budget_bits,
                                    std::uint64_t delta) {
  if (delta == 0) throw Error(ErrorCode::InvalidArgument, "delta must be positive");
  if (fronts.empty()) throw Error(ErrorCode::EmptyInput, "no layers to allocate");
  for (const auto& front : fronts)
    if (front.empty()) throw Error(ErrorCode::EmptyInput, "a layer has no candidates");

  const std::size_t num_layers = fronts.size();
  auto units = [&](std::uint64_t bits) { return (bits + delta - 1) / delta; };

  std::uint64_t min_bits_total = 0, max_units_total = 0;
  for (const auto& front : fronts) {
    std::uint64_t mn = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t mx = 0;
    for (const Candidate& c : front) {
      mn = std::min(mn, c.memory_bits);
      mx = std::max(mx, units(c.memory_bits));
    }
    min_bits_total += mn;
    max_units_total += mx;
  }
  if (min_bits_total > budget_bits)
    throw Error(ErrorCode::Infeasible,
                "minimal candidate memory " + std::to_string(min_bits_total) +
                    " bits exceeds the budget " + std::to_string(budget_bits));

  const std::uint64_t capacity = std::min<std::uint64_t>(budget_bits / delta, max_units_total);
  const std::size_t cap = static_cast<std::size_t>(capacity);
  constexpr double kInf = std::numeric_limits<double>::infinity();

  // table size (L+1) x (cap+1) doubles; a too-fine delta on a large budget
  // would exhaust memory
  if (static_cast<std::uint64_t>(num_layers + 1) * (capacity + 1) > (1ull << 29))
    throw Error(ErrorCode::InvalidArgument,
                "allocation table would exceed 4 GiB; increase delta");

  // dp[l][u]: optimal cost of layers l..L-1 within u units. Backward pass,
  // then a greedy forward pass fixes the lexicographically smallest optimum.
  std::vector<std::vector<double>> dp(num_layers + 1,
                                      std::vector<double>(cap + 1, kInf));
  std::fill(dp[num_layers].begin(), dp[num_layers].end(), 0.0);
  for (std::size_t l = num_layers; l-- > 0;) {
    const auto& front = fronts[l];
    const auto& metrics = table.layers[l];
    for (std::size_t u = 0; u <= cap; ++u) {
      double best = kInf;
      for (std::size_t c = 0; c < front.size(); ++c) {
        const std::uint64_t w = units(front[c].memory_bits);
        if (w > u) continue;
        const double rest = dp[l + 1][u - w];
        if (rest == kInf) continue;
        const double cost = metrics[c].phi + rest;
        if (cost < best) best = cost;
      }
      dp[l][u] = best;
    }
  }

  if (dp[0][cap] == kInf)
    throw Error(ErrorCode::Infeasible,
                "no assignment fits the budget at the configured memory unit");

  AllocationSolution solution;
  solution.objective_value = dp[0][cap];
  std::size_t remaining = cap;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& front = fronts[l];
    const auto& metrics = table.layers[l];
    for (std::size_t c = 0; c < front.size(); ++c) {
      const std::uint64_t w = units(front[c].memory_bits);
      if (w > remaining) continue;
      const double rest = dp[l + 1][remaining - w];
      if (rest == kInf) continue;
      if (metrics[c].phi + rest == dp[l][remaining]) {
        solution.chosen.push_back(c);
        solution.total_memory_bits += front[c].memory_bits;
        remaining -= static_cast<std::size_t>(w);
        break;
      }
    }
  }
  return solution;
}

std::map<std::string, int> activation_bit_allocation(
    const std::vector<std::pair<std::string, std::uint64_t>>& tensor_sizes,
    std::uint64_t psi_aws, const BitSet& bitset) {
  if (psi_aws == 0)
    throw Error(ErrorCode::InvalidArgument, "activation budget must be positive");
  std::map<std::string, int> out;
  for (const auto& [name, size] : tensor_sizes) {
    if (size == 0)
      throw Error(ErrorCode::InvalidArgument, "activation tensor '" + name + "' has size 0");
    const std::uint64_t limit = psi_aws / size;  // floor
    int best = -1;
    for (int b : bitset.bits)
      if (static_cast<std::uint64_t>(b) <= limit) best = b;
    if (best < 0)
      throw Error(ErrorCode::NoFeasibleBit,
                  "no bit-width in the set fits activation '" + name + "' (limit " +
                      std::to_string(limit) + ")");
    out[name] = best;
  }
  return out;
}

}  // namespace mlorq
