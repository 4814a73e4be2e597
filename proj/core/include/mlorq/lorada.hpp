#ifndef MLORQ_LORADA_HPP
#define MLORQ_LORADA_HPP

#include <cstdint>
#include <vector>

#include "mlorq/inter_search.hpp"
#include "mlorq/intra_search.hpp"
#include "mlorq/matrix.hpp"
#include "mlorq/model.hpp"
#include "mlorq/quantizer.hpp"

namespace mlorq {

struct LoRAdaConfig {
  std::size_t iterations = 20000;
  double learning_rate = 0.3;
  double lambda = 0.3;
  std::size_t batch_size = 32;
  double beta_start = 20.0;
  double beta_end = 2.0;
  double warmup = 0.2;  // fraction of iterations with the regularizer off
  std::uint64_t seed = 0;

  enum class Target { CompressedInput, FloatInput };
  Target target = Target::CompressedInput;
};

/// Regularizer exponent at a given step; the warmup phase reports
/// `active = false` (regularizer disabled).
struct AnnealPoint {
  double beta;
  bool active;
};
AnnealPoint anneal_beta(const LoRAdaConfig& cfg, std::size_t iteration);

/// V such that h(V) equals the fractional part of M/s per element, so the
/// initial soft-quantized M reproduces M (within one grid step of the
/// nearest-rounded value).
Matrix init_rounding_vars(const Matrix& m, const QuantParams& params);

/// Rounding optimization state for one factor pair.
struct FactorRounding {
  Matrix A;  // n_out x r, float
  Matrix B;  // r x n_in, float
  QuantParams params_a;
  QuantParams params_b;
  Matrix VA;
  Matrix VB;
};

struct LoRAdaEval {
  double value = 0.0;
  double reconstruction = 0.0;
  double regularizer = 0.0;
  Matrix grad_va;
  Matrix grad_vb;
};

/// Objective mean_n ||T_n - Q_S(A)Q_S(B) x_n||^2 + lambda (f_reg(VA) + f_reg(VB))
/// with analytic gradients; clips carry zero gradient where saturated.
/// `inputs` is N x n_in, `targets` is N x n_out. The reconstruction term is
/// averaged over the batch so lambda balances the same way at any N.
LoRAdaEval lorada_objective_and_gradient(const FactorRounding& state, const Matrix& inputs,
                                         const Matrix& targets, double lambda, double beta,
                                         bool regularizer_active = true);

/// Dense variant used for quant-only layers (single V_W).
struct DenseRounding {
  Matrix W;
  QuantParams params_w;
  Matrix VW;
};

struct LoRAdaEvalDense {
  double value = 0.0;
  double reconstruction = 0.0;
  double regularizer = 0.0;
  Matrix grad_vw;
};

LoRAdaEvalDense lorada_objective_and_gradient_dense(const DenseRounding& state,
                                                    const Matrix& inputs, const Matrix& targets,
                                                    double lambda, double beta,
                                                    bool regularizer_active = true);

/// Hard rounding of h(V) to {0, 1}: codes = clip(floor(M/s) + bit + z).
std::vector<std::int32_t> hard_commit_codes(const Matrix& m, const Matrix& v,
                                            const QuantParams& params);

struct RoundedFactors {
  std::vector<std::int32_t> codes_a;
  std::vector<std::int32_t> codes_b;
  Matrix a_q;
  Matrix b_q;
  Matrix va;  // final soft-rounding variables (empty when iterations == 0)
  Matrix vb;
};

/// Runs the Adam schedule on (VA, VB), hard-commits, and keeps the nearest
/// rounding when the committed objective would regress.
RoundedFactors optimize_layer_factored(const Matrix& a, const Matrix& b,
                                       const QuantParams& pa, const QuantParams& pb,
                                       const Matrix& inputs, const Matrix& targets,
                                       const LoRAdaConfig& cfg);

struct RoundedDense {
  std::vector<std::int32_t> codes_w;
  Matrix w_q;
};

RoundedDense optimize_layer_dense(const Matrix& w, const QuantParams& pw, const Matrix& inputs,
                                  const Matrix& targets, const LoRAdaConfig& cfg);

/// Final compressed weights of one layer.
struct CompressedLayer {
  std::string name;
  CandidateKind kind = CandidateKind::QuantOnly;
  std::size_t rank = 0;
  int bits_w = 0;
  int bits_a = 0;
  int bits_b = 0;
  QuantParams params_w;
  QuantParams params_a;
  QuantParams params_b;  // truncated to the rank
  std::vector<std::int32_t> codes_w;
  std::vector<std::int32_t> codes_a;
  std::vector<std::int32_t> codes_b;
  Matrix w_effective;  // dequantized dense weight (A~ B~ for low rank)
};

struct CompressedModel {
  std::vector<CompressedLayer> layers;
};

/// Applies the chosen candidates layer by layer in sequential order, feeding
/// each optimization the compressed-propagated input. iterations == 0 yields
/// plain nearest rounding.
CompressedModel run_sequential_rounding(const Model& model,
                                        const std::vector<LayerPlan>& plans,
                                        const std::vector<std::vector<Candidate>>& fronts,
                                        const AllocationSolution& solution,
                                        const Matrix& calibration, const LoRAdaConfig& cfg);

}  // namespace mlorq

#endif  // MLORQ_LORADA_HPP
