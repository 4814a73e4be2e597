#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlorq/errors.hpp"
#include "mlorq/pipeline.hpp"

namespace {

using nlohmann::json;

struct CompressArgs {
  std::string manifest;
  std::string config_path;
  std::string out_dir = "mlorq_out";
  double budget_bits = 0.0;
  double avg_bits = 0.0;
  double act_budget_bits = 0.0;
  std::string bitset = "2,3,4,6,8";
  std::string percentiles;  // empty -> built-in grid
  std::size_t rank_stride = 1;
  std::size_t k_inf = 16;
  std::uint64_t delta = 1024;
  std::string hessian = "auto";
  bool quant_only = false;
  bool lorada = false;
  std::uint64_t seed = 0;
  // rounding knobs (shared with the round command)
  std::size_t iterations = 20000;
  double lr = 0.3;
  double lambda = 0.3;
  double beta_start = 20.0;
  double beta_end = 2.0;
  double warmup = 0.2;
  std::string target = "compressed_input";
};

void add_rounding_flags(CLI::App* cmd, CompressArgs& args) {
  cmd->add_option("--iterations", args.iterations, "Gradient steps per layer");
  cmd->add_option("--lr", args.lr, "Adam learning rate");
  cmd->add_option("--lambda", args.lambda, "Regularization weight");
  cmd->add_option("--beta-start", args.beta_start, "Anneal start exponent");
  cmd->add_option("--beta-end", args.beta_end, "Anneal end exponent");
  cmd->add_option("--warmup", args.warmup, "Warmup fraction with the regularizer off");
  cmd->add_option("--target", args.target, "Reconstruction target input")
      ->check(CLI::IsMember({"compressed_input", "float_input"}));
}

mlorq::LoRAdaConfig rounding_config(const CompressArgs& args) {
  mlorq::LoRAdaConfig cfg;
  cfg.iterations = args.iterations;
  cfg.learning_rate = args.lr;
  cfg.lambda = args.lambda;
  cfg.beta_start = args.beta_start;
  cfg.beta_end = args.beta_end;
  cfg.warmup = args.warmup;
  cfg.seed = args.seed;
  cfg.target = args.target == "float_input" ? mlorq::LoRAdaConfig::Target::FloatInput
                                            : mlorq::LoRAdaConfig::Target::CompressedInput;
  return cfg;
}

// Config file values apply first; flags given on the command line win.
void apply_config_file(const std::string& path, CLI::App* cmd, CompressArgs& args) {
  std::ifstream in(path);
  if (!in) throw mlorq::Error(mlorq::ErrorCode::IoFailure, "cannot open config: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw mlorq::Error(mlorq::ErrorCode::InvalidArgument,
                       std::string("config is not valid JSON: ") + e.what());
  }

  auto given = [&](const char* flag) {
    const CLI::Option* opt = cmd->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  auto load = [&](const char* key, const char* flag, auto& slot) {
    if (doc.contains(key) && !given(flag))
      slot = doc.at(key).get<std::decay_t<decltype(slot)>>();
  };

  load("budget_bits", "--budget-bits", args.budget_bits);
  load("avg_bits", "--avg-bits", args.avg_bits);
  load("act_budget_bits", "--act-budget-bits", args.act_budget_bits);
  load("bitset", "--bitset", args.bitset);
  load("percentiles", "--percentiles", args.percentiles);
  load("rank_stride", "--rank-stride", args.rank_stride);
  load("k_inf", "--k-inf", args.k_inf);
  load("delta", "--delta", args.delta);
  load("hessian", "--hessian", args.hessian);
  load("quant_only", "--quant-only", args.quant_only);
  load("lorada", "--lorada", args.lorada);
  load("seed", "--seed", args.seed);
  load("output_dir", "--out", args.out_dir);
  load("iterations", "--iterations", args.iterations);
  load("lr", "--lr", args.lr);
  load("lambda", "--lambda", args.lambda);
  load("beta_start", "--beta-start", args.beta_start);
  load("beta_end", "--beta-end", args.beta_end);
  load("warmup", "--warmup", args.warmup);
  load("target", "--target", args.target);
}

std::vector<double> parse_percentiles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (...) {
      throw mlorq::Error(mlorq::ErrorCode::InvalidArgument,
                         "bad percentile token: " + tok);
    }
  }
  return out;
}

mlorq::RunConfig make_run_config(CLI::App* cmd, CompressArgs& args) {
  if (!args.config_path.empty()) apply_config_file(args.config_path, cmd, args);

  mlorq::RunConfig config;
  config.manifest_path = args.manifest;
  if (args.budget_bits > 0.0)
    config.budget_bits = static_cast<std::uint64_t>(args.budget_bits);
  if (args.avg_bits > 0.0) config.avg_bits = args.avg_bits;
  if (args.act_budget_bits > 0.0)
    config.act_budget_bits = static_cast<std::uint64_t>(args.act_budget_bits);
  config.bitset = mlorq::BitSet::parse(args.bitset);
  if (!args.percentiles.empty()) config.percentiles = parse_percentiles(args.percentiles);
  config.rank_stride = args.rank_stride;
  config.k_inf = args.k_inf;
  config.delta = args.delta;
  config.hessian_mode = mlorq::hessian_mode_from_string(args.hessian);
  config.quant_only = args.quant_only;
  config.lorada_enabled = args.lorada;
  config.lorada = rounding_config(args);
  config.seed = args.seed;
  config.output_dir = args.out_dir;
  return config;
}

int run(int argc, char** argv) {
  CLI::App app{"MLoRQ: joint low-rank and quantization compression under a memory budget"};
  app.require_subcommand(1);

  // inspect
  std::string inspect_manifest, inspect_bitset = "2,3,4,6,8";
  CLI::App* inspect = app.add_subcommand("inspect", "Describe a model and its search space");
  inspect->add_option("manifest", inspect_manifest, "Model manifest path")->required();
  inspect->add_option("--bitset", inspect_bitset, "Bit-width options, comma separated");

  // compress
  CompressArgs cargs;
  CLI::App* compress = app.add_subcommand("compress", "Run the full compression workflow");
  compress->add_option("manifest", cargs.manifest, "Model manifest path")->required();
  compress->add_option("--budget-bits", cargs.budget_bits, "Weight memory budget in bits");
  compress->add_option("--avg-bits", cargs.avg_bits,
                       "Budget as average bits per weight element");
  compress->add_option("--act-budget-bits", cargs.act_budget_bits,
                       "Activation memory budget in bits");
  compress->add_option("--bitset", cargs.bitset, "Bit-width options, comma separated");
  compress->add_option("--percentiles", cargs.percentiles,
                       "Clip-search percentile grid, comma separated");
  compress->add_option("--rank-stride", cargs.rank_stride, "Rank enumeration stride");
  compress->add_option("--k-inf", cargs.k_inf, "Exact metric evaluations per bit pair");
  compress->add_option("--delta", cargs.delta, "Knapsack memory unit in bits");
  compress->add_option("--hessian", cargs.hessian, "auto|provided|gauss_newton|identity")
      ->check(CLI::IsMember({"auto", "provided", "gauss_newton", "identity"}));
  compress->add_flag("--quant-only", cargs.quant_only,
                     "Restrict the search to quantization candidates");
  compress->add_flag("--lorada", cargs.lorada, "Apply adaptive rounding after allocation");
  compress->add_option("--seed", cargs.seed, "Run seed");
  compress->add_option("--out", cargs.out_dir, "Output directory");
  compress->add_option("--config", cargs.config_path, "JSON config file");
  add_rounding_flags(compress, cargs);

  // eval
  std::string eval_manifest, eval_dir;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a saved solution against float");
  eval->add_option("manifest", eval_manifest, "Model manifest path")->required();
  eval->add_option("solution_dir", eval_dir, "Directory written by compress")->required();

  // pareto
  CompressArgs pargs;
  std::string pareto_out;
  CLI::App* pareto = app.add_subcommand("pareto", "Dump per-layer Pareto fronts as CSV");
  pareto->add_option("manifest", pargs.manifest, "Model manifest path")->required();
  pareto->add_option("--bitset", pargs.bitset, "Bit-width options, comma separated");
  pareto->add_option("--rank-stride", pargs.rank_stride, "Rank enumeration stride");
  pareto->add_option("--hessian", pargs.hessian, "auto|provided|gauss_newton|identity")
      ->check(CLI::IsMember({"auto", "provided", "gauss_newton", "identity"}));
  pareto->add_flag("--quant-only", pargs.quant_only,
                   "Restrict the search to quantization candidates");
  pareto->add_option("--out", pareto_out, "Write CSV here instead of stdout");

  // round
  CompressArgs rargs;
  std::string round_dir;
  CLI::App* round = app.add_subcommand("round", "Re-run adaptive rounding on a saved solution");
  round->add_option("manifest", rargs.manifest, "Model manifest path")->required();
  round->add_option("solution_dir", round_dir, "Directory written by compress")->required();
  round->add_option("--seed", rargs.seed, "Run seed");
  add_rounding_flags(round, rargs);

  CLI11_PARSE(app, argc, argv);

  if (inspect->parsed()) {
    const auto report =
        mlorq::inspect_model(inspect_manifest, mlorq::BitSet::parse(inspect_bitset));
    std::cout << report.text;
    return 0;
  }
  if (compress->parsed()) {
    const mlorq::RunConfig config = make_run_config(compress, cargs);
    const mlorq::CompressResult result = mlorq::run_compress(config);
    if (!config.output_dir.empty()) mlorq::save_solution(result, config.output_dir);
    std::cout << result.report;
    return 0;
  }
  if (eval->parsed()) {
    const mlorq::EvalReport report = mlorq::evaluate_solution(eval_manifest, eval_dir);
    std::cout << report.text;
    return 0;
  }
  if (pareto->parsed()) {
    mlorq::RunConfig config;
    config.manifest_path = pargs.manifest;
    config.bitset = mlorq::BitSet::parse(pargs.bitset);
    config.rank_stride = pargs.rank_stride;
    config.hessian_mode = mlorq::hessian_mode_from_string(pargs.hessian);
    config.quant_only = pargs.quant_only;

    auto [manifest, container] = mlorq::load_model(config.manifest_path);
    const mlorq::Model model = mlorq::build_model(manifest, container);
    const mlorq::Matrix calibration = mlorq::load_calibration(manifest, container);
    const auto hessians = mlorq::resolve_hessians(model, manifest, container, calibration,
                                                  config.hessian_mode);
    std::vector<std::vector<mlorq::Candidate>> fronts;
    std::vector<std::string> names;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const mlorq::LayerPlan plan = mlorq::build_layer_plan(
          model.layers[l], l, hessians[l], config.bitset, !config.quant_only);
      fronts.push_back(mlorq::pareto_front(mlorq::enumerate_candidates(
          model.layers[l], plan, hessians[l], config.bitset, config.rank_stride)));
      names.push_back(model.layers[l].name);
    }
    const std::string csv = mlorq::fronts_csv(fronts, names);
    if (pareto_out.empty()) {
      std::cout << csv;
    } else {
      std::ofstream out(pareto_out, std::ios::trunc);
      if (!out)
        throw mlorq::Error(mlorq::ErrorCode::IoFailure, "cannot write " + pareto_out);
      out << csv;
    }
    return 0;
  }
  if (round->parsed()) {
    mlorq::apply_rounding(rargs.manifest, round_dir, rounding_config(rargs));
    std::cout << "rounding applied to " << round_dir << "\n";
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const mlorq::Error& e) {
    std::cerr << "error [" << mlorq::error_code_name(e.code()) << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
