#include "mlorq/pipeline.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mlorq/errors.hpp"
#include "mlorq/netsim.hpp"

namespace mlorq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string kind_name(CandidateKind k) {
  return k == CandidateKind::QuantOnly ? "quant" : "lowrank";
}

json params_to_json(const QuantParams& p) {
  json j;
  j["bits"] = p.bits;
  j["scales"] = p.scales;
  j["zero_points"] = p.zero_points;
  return j;
}

QuantParams params_from_json(const json& j) {
  QuantParams p;
  p.bits = j.at("bits").get<int>();
  p.scales = j.at("scales").get<std::vector<double>>();
  p.zero_points = j.at("zero_points").get<std::vector<int>>();
  return p;
}

std::string bitset_to_string(const BitSet& b) {
  std::string s;
  for (std::size_t i = 0; i < b.bits.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(b.bits[i]);
  }
  return s;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
  out << text;
}

}  // namespace

HessianMode hessian_mode_from_string(const std::string& s) {
  if (s == "auto") return HessianMode::Auto;
  if (s == "provided") return HessianMode::Provided;
  if (s == "gauss_newton") return HessianMode::GaussNewton;
  if (s == "identity") return HessianMode::Identity;
  throw Error(ErrorCode::InvalidArgument, "unknown hessian mode: " + s);
}

std::string hessian_mode_to_string(HessianMode m) {
  switch (m) {
    case HessianMode::Auto: return "auto";
    case HessianMode::Provided: return "provided";
    case HessianMode::GaussNewton: return "gauss_newton";
    case HessianMode::Identity: return "identity";
  }
  return "auto";
}

std::vector<HessianWeights> resolve_hessians(const Model& model, const ModelManifest& manifest,
                                             const TensorContainer& container,
                                             const Matrix& calibration, HessianMode mode) {
  const std::size_t num_layers = model.layers.size();
  std::vector<HessianWeights> out(num_layers);

  auto provided = load_provided_hessians(manifest, container);
  const bool all_provided = [&] {
    for (const Layer& layer : model.layers)
      if (!provided.count(layer.name)) return false;
    return true;
  }();

  switch (mode) {
    case HessianMode::Identity:
      return identity_hessians(model);
    case HessianMode::GaussNewton:
      return estimate_hessian_diag(model, calibration);
    case HessianMode::Provided: {
      if (!all_provided)
        throw Error(ErrorCode::MissingTensor,
                    "hessian mode 'provided' but the manifest lacks hessian_refs "
                    "for some layers");
      for (std::size_t l = 0; l < num_layers; ++l)
        out[l] = make_hessian_weights(provided.at(model.layers[l].name));
      return out;
    }
    case HessianMode::Auto: {
      std::vector<HessianWeights> estimated;
      if (!all_provided) estimated = estimate_hessian_diag(model, calibration);
      for (std::size_t l = 0; l < num_layers; ++l) {
        auto it = provided.find(model.layers[l].name);
        out[l] = it != provided.end() ? make_hessian_weights(it->second)
                                      : std::move(estimated[l]);
      }
      return out;
    }
  }
  return out;
}

std::string fronts_csv(const std::vector<std::vector<Candidate>>& fronts,
                       const std::vector<std::string>& layer_names) {
  std::ostringstream out;
  out << "layer,kind,r,b_A,b_B,b_W,local_loss,memory_bits\n";
  for (std::size_t l = 0; l < fronts.size(); ++l) {
    for (const Candidate& c : fronts[l]) {
      out << layer_names[l] << "," << kind_name(c.kind) << ",";
      if (c.kind == CandidateKind::LowRankQuant)
        out << c.rank << "," << c.bits_a << "," << c.bits_b << ",,";
      else
        out << ",,," << c.bits_w << ",";
      out << fmt(c.local_loss, "%.17g") << "," << c.memory_bits << "\n";
    }
  }
  return out.str();
}

std::string format_report(const CompressResult& r) {
  std::ostringstream out;
  out << "MLoRQ solution report\n";
  out << "model: " << r.model.name << "\n";
  out << "layer kind r b_A b_B b_W memory_bits phi interpolated\n";
  for (std::size_t l = 0; l < r.model.layers.size(); ++l) {
    const Candidate& c = r.fronts[l][r.solution.chosen[l]];
    const MetricEntry& e = r.table.layers[l][r.solution.chosen[l]];
    out << r.model.layers[l].name << " " << kind_name(c.kind) << " ";
    if (c.kind == CandidateKind::LowRankQuant)
      out << c.rank << " " << c.bits_a << " " << c.bits_b << " - ";
    else
      out << "- - - " << c.bits_w << " ";
    out << c.memory_bits << " " << fmt(e.phi) << " " << (e.interpolated ? "yes" : "no")
        << "\n";
  }
  for (const auto& [name, bits] : r.solution.activation_bits)
    out << "activation " << name << ": " << bits << "\n";
  out << "total_memory_bits: " << r.solution.total_memory_bits << "\n";
  out << "budget_bits: " << r.budget_bits << "\n";
  out << "objective: " << fmt(r.solution.objective_value) << "\n";
  return out.str();
}

CompressResult run_compress(const RunConfig& config) {
  if (config.budget_bits.has_value() == config.avg_bits.has_value())
    throw Error(ErrorCode::InvalidArgument,
                "exactly one of budget-bits and avg-bits must be given");

  CompressResult result;
  result.config = config;
  auto [manifest, container] = load_model(config.manifest_path);
  result.manifest = std::move(manifest);
  result.model = build_model(result.manifest, container);
  result.calibration = load_calibration(result.manifest, container);
  const Model& model = result.model;

  result.budget_bits = config.budget_bits
                           ? *config.budget_bits
                           : budget_from_avg_bits(*config.avg_bits, model);

  const std::vector<HessianWeights> hessians = resolve_hessians(
      model, result.manifest, container, result.calibration, config.hessian_mode);

  for (double p : config.percentiles)
    if (p <= 0.0 || p > 1.0)
      throw Error(ErrorCode::InvalidArgument, "percentiles must lie in (0, 1]");
  const std::span<const double> grid =
      config.percentiles.empty() ? percentile_grid()
                                 : std::span<const double>(config.percentiles);

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    result.plans.push_back(build_layer_plan(model.layers[l], l, hessians[l], config.bitset,
                                            !config.quant_only, grid));
    result.fronts.push_back(pareto_front(enumerate_candidates(
        model.layers[l], result.plans[l], hessians[l], config.bitset, config.rank_stride)));
  }

  const ForwardTrace trace = forward_trace(model, result.calibration);
  const ExactEvaluator evaluator = [&](std::size_t l, const Candidate& c) {
    return candidate_network_nmse(
        model, trace, l, reconstruct_candidate(result.plans[l], model.layers[l], c));
  };
  result.table = interpolate_metric_table(result.fronts, config.k_inf, evaluator);

  result.solution =
      solve_allocation(result.fronts, result.table, result.budget_bits, config.delta);

  if (config.act_budget_bits) {
    std::vector<std::pair<std::string, std::uint64_t>> sizes;
    for (const Layer& layer : model.layers) sizes.emplace_back(layer.name, layer.n_in());
    result.solution.activation_bits =
        activation_bit_allocation(sizes, *config.act_budget_bits, config.bitset);
    // per-tensor clip search over each layer's input trace
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const Layer& layer = model.layers[l];
      const Matrix& x = trace.inputs[l];
      Matrix flat(1, x.size());
      std::copy(x.data(), x.data() + x.size(), flat.data());
      result.activation_params[layer.name] =
          search_params_B(flat, result.solution.activation_bits.at(layer.name));
    }
  }

  LoRAdaConfig rounding = config.lorada;
  rounding.seed = config.seed;
  if (!config.lorada_enabled) rounding.iterations = 0;
  result.compressed = run_sequential_rounding(model, result.plans, result.fronts,
                                              result.solution, result.calibration, rounding);

  result.report = format_report(result);
  return result;
}

namespace {

json solution_to_json(const CompressResult& r) {
  json doc;
  doc["model_name"] = r.model.name;
  doc["budget_bits"] = r.budget_bits;
  if (r.config.act_budget_bits) doc["act_budget_bits"] = *r.config.act_budget_bits;
  doc["bitset"] = r.config.bitset.bits;
  doc["rank_stride"] = r.config.rank_stride;
  doc["k_inf"] = r.config.k_inf;
  doc["delta"] = r.config.delta;
  {
    const std::span<const double> grid =
        r.config.percentiles.empty() ? percentile_grid()
                                     : std::span<const double>(r.config.percentiles);
    doc["percentiles"] = std::vector<double>(grid.begin(), grid.end());
  }
  doc["hessian_mode"] = hessian_mode_to_string(r.config.hessian_mode);
  doc["quant_only"] = r.config.quant_only;
  doc["seed"] = r.config.seed;
  doc["objective"] = r.solution.objective_value;
  doc["total_memory_bits"] = r.solution.total_memory_bits;
  json lorada;
  lorada["enabled"] = r.config.lorada_enabled;
  lorada["iterations"] = r.config.lorada.iterations;
  lorada["learning_rate"] = r.config.lorada.learning_rate;
  lorada["lambda"] = r.config.lorada.lambda;
  lorada["batch_size"] = r.config.lorada.batch_size;
  lorada["beta_start"] = r.config.lorada.beta_start;
  lorada["beta_end"] = r.config.lorada.beta_end;
  lorada["warmup"] = r.config.lorada.warmup;
  lorada["target"] = r.config.lorada.target == LoRAdaConfig::Target::FloatInput
                         ? "float_input"
                         : "compressed_input";
  doc["lorada"] = std::move(lorada);

  doc["layers"] = json::array();
  for (std::size_t l = 0; l < r.compressed.layers.size(); ++l) {
    const CompressedLayer& cl = r.compressed.layers[l];
    const Candidate& cand = r.fronts[l][r.solution.chosen[l]];
    const MetricEntry& entry = r.table.layers[l][r.solution.chosen[l]];
    json jl;
    jl["name"] = cl.name;
    jl["kind"] = kind_name(cl.kind);
    jl["memory_bits"] = cand.memory_bits;
    jl["local_loss"] = cand.local_loss;
    jl["phi"] = entry.phi;
    jl["interpolated"] = entry.interpolated;
    if (cl.kind == CandidateKind::QuantOnly) {
      jl["bits_w"] = cl.bits_w;
      jl["params_w"] = params_to_json(cl.params_w);
    } else {
      jl["rank"] = cl.rank;
      jl["bits_a"] = cl.bits_a;
      jl["bits_b"] = cl.bits_b;
      jl["params_a"] = params_to_json(cl.params_a);
      jl["params_b"] = params_to_json(cl.params_b);
    }
    doc["layers"].push_back(std::move(jl));
  }
  if (!r.solution.activation_bits.empty()) {
    json ja = json::object();
    for (const auto& [name, bits] : r.solution.activation_bits) ja[name] = bits;
    doc["activation_bits"] = std::move(ja);
  }
  if (!r.activation_params.empty()) {
    json jp = json::object();
    for (const auto& [name, params] : r.activation_params) jp[name] = params_to_json(params);
    doc["activation_params"] = std::move(jp);
  }
  return doc;
}

}  // namespace

void save_solution(const CompressResult& result, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  write_text((dir / "solution.txt").string(), result.report);
  write_text((dir / "solution.json").string(), solution_to_json(result).dump(2) + "\n");

  std::vector<std::string> names;
  for (const Layer& layer : result.model.layers) names.push_back(layer.name);
  write_text((dir / "fronts.csv").string(), fronts_csv(result.fronts, names));

  std::ostringstream sol;
  sol << "layer,kind,r,b_A,b_B,b_W,memory_bits,phi,interpolated\n";
  for (std::size_t l = 0; l < result.model.layers.size(); ++l) {
    const Candidate& c = result.fronts[l][result.solution.chosen[l]];
    const MetricEntry& e = result.table.layers[l][result.solution.chosen[l]];
    sol << names[l] << "," << kind_name(c.kind) << ",";
    if (c.kind == CandidateKind::LowRankQuant)
      sol << c.rank << "," << c.bits_a << "," << c.bits_b << ",,";
    else
      sol << ",,," << c.bits_w << ",";
    sol << c.memory_bits << "," << fmt(e.phi, "%.17g") << ","
        << (e.interpolated ? "yes" : "no") << "\n";
  }
  write_text((dir / "solution.csv").string(), sol.str());

  TensorContainer codes;
  for (const CompressedLayer& cl : result.compressed.layers) {
    if (cl.kind == CandidateKind::QuantOnly) {
      codes.add_i32(cl.name + ".W.codes", cl.codes_w,
                    {cl.w_effective.rows(), cl.w_effective.cols()});
    } else {
      codes.add_i32(cl.name + ".A.codes", cl.codes_a, {cl.w_effective.rows(), cl.rank});
      codes.add_i32(cl.name + ".B.codes", cl.codes_b, {cl.rank, cl.w_effective.cols()});
    }
  }
  write_container(codes, (dir / "compressed.mlrq").string());
}

LoadedSolution load_solution(const std::string& solution_dir) {
  const fs::path dir(solution_dir);
  std::ifstream in(dir / "solution.json");
  if (!in)
    throw Error(ErrorCode::IoFailure,
                "cannot open " + (dir / "solution.json").string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad solution.json: ") + e.what());
  }
  const TensorContainer codes = read_container((dir / "compressed.mlrq").string());

  LoadedSolution loaded;
  loaded.budget_bits = doc.at("budget_bits").get<std::uint64_t>();
  if (doc.contains("act_budget_bits"))
    loaded.act_budget_bits = doc.at("act_budget_bits").get<std::uint64_t>();
  loaded.seed = doc.at("seed").get<std::uint64_t>();
  loaded.hessian_mode = hessian_mode_from_string(doc.at("hessian_mode").get<std::string>());
  loaded.quant_only = doc.at("quant_only").get<bool>();
  loaded.bitset.bits = doc.at("bitset").get<std::vector<int>>();
  loaded.objective = doc.at("objective").get<double>();
  if (doc.contains("activation_bits"))
    for (auto it = doc.at("activation_bits").begin(); it != doc.at("activation_bits").end(); ++it)
      loaded.activation_bits[it.key()] = it.value().get<int>();

  for (const json& jl : doc.at("layers")) {
    CompressedLayer cl;
    cl.name = jl.at("name").get<std::string>();
    const std::string kind = jl.at("kind").get<std::string>();
    if (kind == "quant") {
      cl.kind = CandidateKind::QuantOnly;
      cl.bits_w = jl.at("bits_w").get<int>();
      cl.params_w = params_from_json(jl.at("params_w"));
      const TensorEntry& e = codes.get(cl.name + ".W.codes");
      cl.codes_w = codes.get_i32(cl.name + ".W.codes");
      cl.w_effective = dequantize(cl.codes_w, static_cast<std::size_t>(e.shape[0]),
                                  static_cast<std::size_t>(e.shape[1]), cl.params_w);
    } else {
      cl.kind = CandidateKind::LowRankQuant;
      cl.rank = jl.at("rank").get<std::size_t>();
      cl.bits_a = jl.at("bits_a").get<int>();
      cl.bits_b = jl.at("bits_b").get<int>();
      cl.params_a = params_from_json(jl.at("params_a"));
      cl.params_b = params_from_json(jl.at("params_b"));
      const TensorEntry& ea = codes.get(cl.name + ".A.codes");
      const TensorEntry& eb = codes.get(cl.name + ".B.codes");
      cl.codes_a = codes.get_i32(cl.name + ".A.codes");
      cl.codes_b = codes.get_i32(cl.name + ".B.codes");
      const Matrix a = dequantize(cl.codes_a, static_cast<std::size_t>(ea.shape[0]),
                                  static_cast<std::size_t>(ea.shape[1]), cl.params_a);
      const Matrix b = dequantize(cl.codes_b, static_cast<std::size_t>(eb.shape[0]),
                                  static_cast<std::size_t>(eb.shape[1]), cl.params_b);
      cl.w_effective = matmul(a, b);
    }
    loaded.layers.push_back(std::move(cl));
  }
  return loaded;
}

EvalReport evaluate_solution(const std::string& manifest_path,
                             const std::string& solution_dir) {
  auto [manifest, container] = load_model(manifest_path);
  const Model model = build_model(manifest, container);
  const Matrix calibration = load_calibration(manifest, container);
  const LoadedSolution loaded = load_solution(solution_dir);
  if (loaded.layers.size() != model.layers.size())
    throw Error(ErrorCode::ShapeMismatch, "solution layer count does not match the manifest");

  Model compressed_model = model;
  EvalReport report;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const CompressedLayer& cl = loaded.layers[l];
    if (cl.name != model.layers[l].name)
      throw Error(ErrorCode::ShapeMismatch,
                  "solution layer '" + cl.name + "' does not match manifest order");
    if (!cl.w_effective.same_shape(model.layers[l].weight))
      throw Error(ErrorCode::ShapeMismatch, "stored codes shape mismatch for " + cl.name);
    compressed_model.layers[l].weight = cl.w_effective;

    const std::uint64_t mem =
        cl.kind == CandidateKind::QuantOnly
            ? memory_quant_only(model.layers[l].n_out(), model.layers[l].n_in(), cl.bits_w)
            : memory_low_rank(model.layers[l].n_out(), model.layers[l].n_in(), cl.rank,
                              cl.bits_a, cl.bits_b);
    report.layer_memory.emplace_back(cl.name, mem);
    report.total_memory_bits += mem;
  }

  const ForwardTrace float_trace = forward_trace(model, calibration);
  const ForwardTrace comp_trace = forward_trace(compressed_model, calibration);
  const double diff = frobenius_sq_diff(float_trace.output, comp_trace.output);
  const double signal = frobenius_sq(float_trace.output);
  if (signal == 0.0)
    throw Error(ErrorCode::ZeroSignal, "float network output is identically zero");
  report.output_nmse = diff / signal;
  report.output_mse =
      diff / static_cast<double>(float_trace.output.rows() * float_trace.output.cols());

  std::ostringstream out;
  out << "MLoRQ evaluation report\n";
  out << "model: " << model.name << "\n";
  for (const auto& [name, mem] : report.layer_memory)
    out << "layer " << name << ": memory_bits=" << mem << "\n";
  out << "total_memory_bits: " << report.total_memory_bits << "\n";
  out << "output_mse: " << fmt(report.output_mse) << "\n";
  out << "output_nmse: " << fmt(report.output_nmse) << "\n";
  report.text = out.str();
  return report;
}

void apply_rounding(const std::string& manifest_path, const std::string& solution_dir,
                    const LoRAdaConfig& cfg) {
  auto [manifest, container] = load_model(manifest_path);
  const Model model = build_model(manifest, container);
  const Matrix calibration = load_calibration(manifest, container);
  LoadedSolution loaded = load_solution(solution_dir);
  if (loaded.layers.size() != model.layers.size())
    throw Error(ErrorCode::ShapeMismatch, "solution layer count does not match the manifest");

  const std::vector<HessianWeights> hessians =
      resolve_hessians(model, manifest, container, calibration, loaded.hessian_mode);

  // Rebuild per-layer plans: decompositions are recomputed (deterministic),
  // quantization parameters come from the saved solution.
  std::vector<LayerPlan> plans;
  std::vector<std::vector<Candidate>> fronts;
  AllocationSolution solution;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const CompressedLayer& cl = loaded.layers[l];
    LayerPlan plan;
    plan.layer_index = l;
    plan.layer_name = cl.name;
    plan.n_out = model.layers[l].n_out();
    plan.n_in = model.layers[l].n_in();
    Candidate cand;
    cand.layer_index = l;
    cand.kind = cl.kind;
    if (cl.kind == CandidateKind::QuantOnly) {
      cand.bits_w = cl.bits_w;
      plan.params_w[cl.bits_w] = cl.params_w;
      cand.memory_bits = memory_quant_only(plan.n_out, plan.n_in, cl.bits_w);
    } else {
      plan.low_rank_enabled = true;
      plan.decomp = hessian_weighted_decompose(model.layers[l].weight, hessians[l].Q);
      cand.rank = cl.rank;
      cand.bits_a = cl.bits_a;
      cand.bits_b = cl.bits_b;
      plan.params_a[cl.bits_a] = cl.params_a;
      // Stored B params are truncated to the rank; pad back to r_max so the
      // generic truncation path can slice them again.
      QuantParams pb = cl.params_b;
      pb.scales.resize(plan.decomp.r_max(), kScaleEpsilon);
      pb.zero_points.resize(plan.decomp.r_max(), 0);
      plan.params_b[cl.bits_b] = std::move(pb);
      cand.memory_bits = memory_low_rank(plan.n_out, plan.n_in, cl.rank, cl.bits_a, cl.bits_b);
    }
    plans.push_back(std::move(plan));
    fronts.push_back({cand});
    solution.chosen.push_back(0);
    solution.total_memory_bits += cand.memory_bits;
  }

  const CompressedModel compressed =
      run_sequential_rounding(model, plans, fronts, solution, calibration, cfg);

  TensorContainer codes;
  for (const CompressedLayer& cl : compressed.layers) {
    if (cl.kind == CandidateKind::QuantOnly) {
      codes.add_i32(cl.name + ".W.codes", cl.codes_w,
                    {cl.w_effective.rows(), cl.w_effective.cols()});
    } else {
      codes.add_i32(cl.name + ".A.codes", cl.codes_a, {cl.w_effective.rows(), cl.rank});
      codes.add_i32(cl.name + ".B.codes", cl.codes_b, {cl.rank, cl.w_effective.cols()});
    }
  }
  write_container(codes, (fs::path(solution_dir) / "compressed.mlrq").string());

  // Record the rounding settings actually applied.
  const fs::path json_path = fs::path(solution_dir) / "solution.json";
  std::ifstream in(json_path);
  json doc = json::parse(in);
  in.close();
  json lorada;
  lorada["enabled"] = cfg.iterations > 0;
  lorada["iterations"] = cfg.iterations;
  lorada["learning_rate"] = cfg.learning_rate;
  lorada["lambda"] = cfg.lambda;
  lorada["batch_size"] = cfg.batch_size;
  lorada["beta_start"] = cfg.beta_start;
  lorada["beta_end"] = cfg.beta_end;
  lorada["warmup"] = cfg.warmup;
  lorada["target"] = cfg.target == LoRAdaConfig::Target::FloatInput ? "float_input"
                                                                    : "compressed_input";
  doc["lorada"] = std::move(lorada);
  write_text(json_path.string(), doc.dump(2) + "\n");
}

InspectReport inspect_model(const std::string& manifest_path, const BitSet& bitset) {
  auto [manifest, container] = load_model(manifest_path);
  const Model model = build_model(manifest, container);
  const Matrix calibration = load_calibration(manifest, container);

  std::ostringstream out;
  out << "model: " << model.name << "\n";
  out << "layers: " << model.layers.size() << "\n";
  std::uint64_t total_params = 0;
  for (const Layer& layer : model.layers) {
    const std::size_t r_max = std::min(layer.n_out(), layer.n_in());
    const std::uint64_t count =
        layer.compressible ? full_candidate_count(bitset.bits.size(), r_max)
                           : static_cast<std::uint64_t>(bitset.bits.size());
    out << "layer " << layer.name << ": " << layer.n_out() << " x " << layer.n_in()
        << " r_max=" << r_max << " candidates=" << count
        << (layer.compressible ? "" : " (quant-only)") << "\n";
    total_params += static_cast<std::uint64_t>(layer.n_out()) * layer.n_in();
  }
  out << "total_float_bits: " << 32 * total_params << "\n";
  out << "calibration_samples: " << calibration.rows() << "\n";
  InspectReport report;
  report.text = out.str();
  return report;
}

}  // namespace mlorq
