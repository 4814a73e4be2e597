#ifndef MLORQ_PIPELINE_HPP
#define MLORQ_PIPELINE_HPP

#include <optional>
#include <string>
#include <vector>

#include "mlorq/inter_search.hpp"
#include "mlorq/intra_search.hpp"
#include "mlorq/lorada.hpp"
#include "mlorq/model.hpp"

namespace mlorq {

enum class HessianMode { Auto, Provided, GaussNewton, Identity };

HessianMode hessian_mode_from_string(const std::string& s);
std::string hessian_mode_to_string(HessianMode m);

struct RunConfig {
  std::string manifest_path;
  std::optional<std::uint64_t> budget_bits;
  std::optional<double> avg_bits;
  std::optional<std::uint64_t> act_budget_bits;
  BitSet bitset = default_bitset();
  std::size_t rank_stride = 1;
  std::size_t k_inf = 16;
  std::uint64_t delta = 1024;
  std::vector<double> percentiles;  // empty -> the default grid
  HessianMode hessian_mode = HessianMode::Auto;
  bool quant_only = false;
  bool lorada_enabled = false;
  LoRAdaConfig lorada;
  std::uint64_t seed = 0;
  std::string output_dir;
};

/// Per-layer weighting per the configured mode. Auto prefers user-supplied
/// matrices and falls back to the Gauss-Newton estimate per layer.
std::vector<HessianWeights> resolve_hessians(const Model& model, const ModelManifest& manifest,
                                             const TensorContainer& container,
                                             const Matrix& calibration, HessianMode mode);

struct CompressResult {
  ModelManifest manifest;
  Model model;
  Matrix calibration;
  std::vector<LayerPlan> plans;
  std::vector<std::vector<Candidate>> fronts;
  MetricTable table;
  AllocationSolution solution;
  CompressedModel compressed;
  // per-tensor activation parameters at the allocated bit-widths, keyed by
  // layer name (present when an activation budget was given)
  std::map<std::string, QuantParams> activation_params;
  std::uint64_t budget_bits = 0;
  RunConfig config;
  std::string report;
};

/// Full workflow: hessians, decomposition, parameter searches, candidate
/// enumeration, Pareto filtering, metric table, allocation, activation bits,
/// optional adaptive rounding.
CompressResult run_compress(const RunConfig& config);

/// Writes solution.txt, solution.json, fronts.csv, solution.csv and
/// compressed.mlrq into out_dir.
void save_solution(const CompressResult& result, const std::string& out_dir);

std::string format_report(const CompressResult& result);
std::string fronts_csv(const std::vector<std::vector<Candidate>>& fronts,
                       const std::vector<std::string>& layer_names);

/// Reloads a saved solution and rebuilds each layer's effective weight from
/// the stored integer codes and parameters.
struct LoadedSolution {
  std::vector<CompressedLayer> layers;
  std::uint64_t budget_bits = 0;
  std::optional<std::uint64_t> act_budget_bits;
  std::uint64_t seed = 0;
  HessianMode hessian_mode = HessianMode::Auto;
  bool quant_only = false;
  BitSet bitset = default_bitset();
  std::map<std::string, int> activation_bits;
  double objective = 0.0;
};

LoadedSolution load_solution(const std::string& solution_dir);

struct EvalReport {
  double output_mse = 0.0;   // mean squared difference per output element
  double output_nmse = 0.0;  // normalized by the float output energy
  std::uint64_t total_memory_bits = 0;
  std::vector<std::pair<std::string, std::uint64_t>> layer_memory;
  std::string text;
};

EvalReport evaluate_solution(const std::string& manifest_path, const std::string& solution_dir);

/// Re-applies adaptive rounding to a saved solution, rewriting its container
/// and report in place.
void apply_rounding(const std::string& manifest_path, const std::string& solution_dir,
                    const LoRAdaConfig& cfg);

struct InspectReport {
  std::string text;
};

InspectReport inspect_model(const std::string& manifest_path, const BitSet& bitset);

}  // namespace mlorq

#endif  // MLORQ_PIPELINE_HPP
