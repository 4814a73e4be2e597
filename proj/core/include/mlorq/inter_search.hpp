#ifndef MLORQ_INTER_SEARCH_HPP
#define MLORQ_INTER_SEARCH_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlorq/intra_search.hpp"
#include "mlorq/matrix.hpp"
#include "mlorq/model.hpp"
#include "mlorq/netsim.hpp"

namespace mlorq {

/// Normalized MSE of the network output when layer `layer_index` is replaced:
///   Phi = ||net(W) - net(W~)||^2 / ||net(W)||^2
/// summed over calibration samples and output coordinates.
double candidate_network_nmse(const Model& model, const ForwardTrace& trace,
                              std::size_t layer_index, const Matrix& replacement);

struct MetricEntry {
  double phi = 0.0;
  bool interpolated = false;
};

/// Per layer, aligned with the Pareto front candidate order.
struct MetricTable {
  std::vector<std::vector<MetricEntry>> layers;
};

using ExactEvaluator = std::function<double(std::size_t layer, const Candidate&)>;

/// Evaluates QuantOnly candidates and small (b_A, b_B) groups exactly; for
/// groups larger than k_inf, evaluates k_inf anchors placed uniformly over
/// the group memory span (extremes always included) and linearly
/// interpolates the rest by local loss. Degenerate anchor pairs (equal
/// losses) fall back to the lower anchor's value.
MetricTable interpolate_metric_table(const std::vector<std::vector<Candidate>>& fronts,
                                     std::size_t k_inf, const ExactEvaluator& evaluate);

struct MemoryBudget {
  std::uint64_t weights_budget_bits = 0;             // psi_WMS
  std::optional<std::uint64_t> activation_budget_bits;  // psi_AWS
};

/// psi_WMS = avg_bits * sum(n_out * n_in) over compressible layers.
std::uint64_t budget_from_avg_bits(double avg_bits, const Model& model);

struct AllocationSolution {
  std::vector<std::size_t> chosen;  // index into fronts[l], one per layer
  std::uint64_t total_memory_bits = 0;
  double objective_value = 0.0;
  std::map<std::string, int> activation_bits;
};

/// Exact multiple-choice knapsack over memory units of `delta` bits
/// (candidate memories rounded up, so unit feasibility implies bit
/// feasibility). Returns the minimum-objective assignment; among optima the
/// lexicographically smallest candidate index vector.
AllocationSolution solve_allocation(const std::vector<std::vector<Candidate>>& fronts,
                                    const MetricTable& table, std::uint64_t budget_bits,
                                    std::uint64_t delta);

/// Closed-form activation assignment: per tensor the largest b in the set
/// with b <= floor(psi_AWS / size).
std::map<std::string, int> activation_bit_allocation(
    const std::vector<std::pair<std::string, std::uint64_t>>& tensor_sizes,
    std::uint64_t psi_aws, const BitSet& bitset);

}  // namespace mlorq

#endif  // MLORQ_INTER_SEARCH_HPP
