#include "mlorq/lorada.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mlorq/errors.hpp"
#include "mlorq/netsim.hpp"

namespace mlorq {

namespace {

constexpr double kInitEps = 1e-4;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct SoftQuant {
  Matrix values;  // dequantized soft weights
  Matrix dval_dv; // d value / d V per element (zero where a clip saturates)
};

SoftQuant soft_quantize_with_grad(const Matrix& m, const Matrix& v, const QuantParams& params) {
  SoftQuant out;
  out.values = Matrix(m.rows(), m.cols());
  out.dval_dv = Matrix(m.rows(), m.cols());
  const double max_code = static_cast<double>(params.max_code());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = params.scales[i];
    const double z = static_cast<double>(params.zero_points[i]);
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double h = rectified_sigmoid(v(i, j));
      const double pre = std::floor(m(i, j) / s) + h + z;
      const double q = std::min(std::max(pre, 0.0), max_code);
      out.values(i, j) = s * (q - z);
      const bool outer_open = pre > 0.0 && pre < max_code;
      out.dval_dv(i, j) = outer_open ? s * rectified_sigmoid_derivative(v(i, j)) : 0.0;
    }
  }
  return out;
}

// d f_reg / d V, and the regularizer value.
double regularizer_with_grad(const Matrix& v, double beta, Matrix& grad) {
  double reg = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double h = rectified_sigmoid(v.data()[i]);
    const double u = 2.0 * h - 1.0;
    const double au = std::abs(u);
    reg += 1.0 - std::pow(au, beta);
    double d = 0.0;
    if (au > 0.0)
      d = -beta * std::pow(au, beta - 1.0) * (u >= 0.0 ? 1.0 : -1.0) * 2.0 *
          rectified_sigmoid_derivative(v.data()[i]);
    grad.data()[i] += d;
  }
  return reg;
}

struct AdamState {
  Matrix m1;
  Matrix m2;

  explicit AdamState(std::size_t rows, std::size_t cols) : m1(rows, cols), m2(rows, cols) {}

  void step(Matrix& param, const Matrix& grad, double lr, std::size_t t) {
    const double corr1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t));
    const double corr2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad.data()[i];
      double& m = m1.data()[i];
      double& v = m2.data()[i];
      m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
      v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
      param.data()[i] -= lr * (m / corr1) / (std::sqrt(v / corr2) + kAdamEps);
    }
  }
};

// Deterministic mini-batch cursor: reshuffles sample indices each epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t num_samples, std::size_t batch_size, std::uint64_t seed)
      : indices_(num_samples), batch_(std::min(batch_size, num_samples)), rng_(seed) {
    std::iota(indices_.begin(), indices_.end(), 0);
    std::shuffle(indices_.begin(), indices_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> batch;
    batch.reserve(batch_);
    for (std::size_t k = 0; k < batch_; ++k) {
      if (cursor_ == indices_.size()) {
        std::shuffle(indices_.begin(), indices_.end(), rng_);
        cursor_ = 0;
      }
      batch.push_back(indices_[cursor_++]);
    }
    return batch;
  }

 private:
  std::vector<std::size_t> indices_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = m.row(rows[i]);
    std::copy(src, src + m.cols(), out.row(i));
  }
  return out;
}

double reconstruction_error(const Matrix& inputs, const Matrix& targets, const Matrix& w) {
  return frobenius_sq_diff(targets, matmul_nt(inputs, w));
}

}  // namespace

namespace {

void validate_config(const LoRAdaConfig& cfg) {
  if (cfg.learning_rate <= 0.0 || cfg.lambda < 0.0 || cfg.batch_size == 0 ||
      cfg.beta_start <= 0.0 || cfg.beta_end <= 0.0)
    throw Error(ErrorCode::InvalidArgument, "rounding config values must be positive");
  if (cfg.warmup < 0.0 || cfg.warmup >= 1.0)
    throw Error(ErrorCode::InvalidArgument, "warmup fraction must lie in [0, 1)");
}

}  // namespace

AnnealPoint anneal_beta(const LoRAdaConfig& cfg, std::size_t iteration) {
  const std::size_t warm = static_cast<std::size_t>(
      cfg.warmup * static_cast<double>(cfg.iterations));
  if (iteration < warm) return {cfg.beta_start, false};
  const std::size_t span = cfg.iterations > warm + 1 ? cfg.iterations - 1 - warm : 1;
  const double frac = static_cast<double>(iteration - warm) / static_cast<double>(span);
  return {cfg.beta_start + (cfg.beta_end - cfg.beta_start) * std::min(frac, 1.0), true};
}

Matrix init_rounding_vars(const Matrix& m, const QuantParams& params) {
  if (params.scales.size() != m.rows())
    throw Error(ErrorCode::ShapeMismatch, "quant params row count mismatch");
  Matrix v(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = params.scales[i];
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double ratio = m(i, j) / s;
      const double frac = ratio - std::floor(ratio);
      const double target = std::min(std::max((frac - kSoftGamma) / (kSoftXi - kSoftGamma),
                                              kInitEps),
                                     1.0 - kInitEps);
      v(i, j) = std::log(target / (1.0 - target));
    }
  }
  return v;
}

LoRAdaEval lorada_objective_and_gradient(const FactorRounding& state, const Matrix& inputs,
                                         const Matrix& targets, double lambda, double beta,
                                         bool regularizer_active) {
  if (inputs.rows() == 0)
    throw Error(ErrorCode::EmptyInput, "empty batch");
  if (inputs.cols() != state.B.cols() || targets.cols() != state.A.rows() ||
      inputs.rows() != targets.rows())
    throw Error(ErrorCode::ShapeMismatch, "lorada objective: inconsistent batch shapes");

  const SoftQuant a_soft = soft_quantize_with_grad(state.A, state.VA, state.params_a);
  const SoftQuant b_soft = soft_quantize_with_grad(state.B, state.VB, state.params_b);

  const Matrix xb = matmul_nt(inputs, b_soft.values);     // N x r
  const Matrix pred = matmul_nt(xb, a_soft.values);       // N x n_out
  // reconstruction averaged over samples, so lambda balances independently
  // of the batch size
  const double inv_n = 1.0 / static_cast<double>(inputs.rows());
  Matrix resid(pred.rows(), pred.cols());
  double recon = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - targets.data()[i];
    resid.data()[i] = 2.0 * inv_n * d;
    recon += inv_n * d * d;
  }

  // d recon / d A~ = resid^T (X B~^T);  d recon / d B~ = (resid A~)^T X
  Matrix grad_a = matmul(transpose(resid), xb);            // n_out x r
  Matrix grad_b = matmul(transpose(matmul(resid, a_soft.values)), inputs);  // r x n_in

  LoRAdaEval eval;
  eval.grad_va = Matrix(state.VA.rows(), state.VA.cols());
  eval.grad_vb = Matrix(state.VB.rows(), state.VB.cols());
  for (std::size_t i = 0; i < grad_a.size(); ++i)
    eval.grad_va.data()[i] = grad_a.data()[i] * a_soft.dval_dv.data()[i];
  for (std::size_t i = 0; i < grad_b.size(); ++i)
    eval.grad_vb.data()[i] = grad_b.data()[i] * b_soft.dval_dv.data()[i];

  eval.reconstruction = recon;
  if (regularizer_active && lambda != 0.0) {
    Matrix reg_grad_a(state.VA.rows(), state.VA.cols());
    Matrix reg_grad_b(state.VB.rows(), state.VB.cols());
    eval.regularizer = regularizer_with_grad(state.VA, beta, reg_grad_a) +
                       regularizer_with_grad(state.VB, beta, reg_grad_b);
    for (std::size_t i = 0; i < reg_grad_a.size(); ++i)
      eval.grad_va.data()[i] += lambda * reg_grad_a.data()[i];
    for (std::size_t i = 0; i < reg_grad_b.size(); ++i)
      eval.grad_vb.data()[i] += lambda * reg_grad_b.data()[i];
  }
  eval.value = eval.reconstruction + lambda * eval.regularizer;
  return eval;
}

LoRAdaEvalDense lorada_objective_and_gradient_dense(const DenseRounding& state,
                                                    const Matrix& inputs, const Matrix& targets,
                                                    double lambda, double beta,
                                                    bool regularizer_active) {
  if (inputs.rows() == 0)
    throw Error(ErrorCode::EmptyInput, "empty batch");
  if (inputs.cols() != state.W.cols() || targets.cols() != state.W.rows() ||
      inputs.rows() != targets.rows())
    throw Error(ErrorCode::ShapeMismatch, "lorada dense objective: inconsistent batch shapes");

  const SoftQuant w_soft = soft_quantize_with_grad(state.W, state.VW, state.params_w);
  const Matrix pred = matmul_nt(inputs, w_soft.values);
  const double inv_n = 1.0 / static_cast<double>(inputs.rows());
  Matrix resid(pred.rows(), pred.cols());
  double recon = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - targets.data()[i];
    resid.data()[i] = 2.0 * inv_n * d;
    recon += inv_n * d * d;
  }
  Matrix grad_w = matmul(transpose(resid), inputs);  // n_out x n_in

  LoRAdaEvalDense eval;
  eval.grad_vw = Matrix(state.VW.rows(), state.VW.cols());
  for (std::size_t i = 0; i < grad_w.size(); ++i)
    eval.grad_vw.data()[i] = grad_w.data()[i] * w_soft.dval_dv.data()[i];

  eval.reconstruction = recon;
  if (regularizer_active && lambda != 0.0) {
    Matrix reg_grad(state.VW.rows(), state.VW.cols());
    eval.regularizer = regularizer_with_grad(state.VW, beta, reg_grad);
    for (std::size_t i = 0; i < reg_grad.size(); ++i)
      eval.grad_vw.data()[i] += lambda * reg_grad.data()[i];
  }
  eval.value = eval.reconstruction + lambda * eval.regularizer;
  return eval;
}

std::vector<std::int32_t> hard_commit_codes(const Matrix& m, const Matrix& v,
                                            const QuantParams& params) {
  std::vector<std::int32_t> codes(m.size());
  const double max_code = static_cast<double>(params.max_code());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = params.scales[i];
    const double z = static_cast<double>(params.zero_points[i]);
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double bit = rectified_sigmoid(v(i, j)) >= 0.5 ? 1.0 : 0.0;
      const double q = std::min(std::max(std::floor(m(i, j) / s) + bit + z, 0.0), max_code);
      codes[i * m.cols() + j] = static_cast<std::int32_t>(q);
    }
  }
  return codes;
}

RoundedFactors optimize_layer_factored(const Matrix& a, const Matrix& b,
                                       const QuantParams& pa, const QuantParams& pb,
                                       const Matrix& inputs, const Matrix& targets,
                                       const LoRAdaConfig& cfg) {
  // Nearest-rounding baseline: kept when optimization does not improve on it.
  const std::vector<std::int32_t> nearest_a = quantize_codes(a, pa);
  const std::vector<std::int32_t> nearest_b = quantize_codes(b, pb);
  const Matrix nearest_aq = dequantize(nearest_a, a.rows(), a.cols(), pa);
  const Matrix nearest_bq = dequantize(nearest_b, b.rows(), b.cols(), pb);
  const double nearest_err =
      reconstruction_error(inputs, targets, matmul(nearest_aq, nearest_bq));

  RoundedFactors result{nearest_a, nearest_b, nearest_aq, nearest_bq, {}, {}};
  if (cfg.iterations == 0) return result;

  FactorRounding state{a, b, pa, pb, init_rounding_vars(a, pa), init_rounding_vars(b, pb)};
  AdamState adam_a(a.rows(), a.cols());
  AdamState adam_b(b.rows(), b.cols());
  BatchSampler sampler(inputs.rows(), cfg.batch_size, cfg.seed);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto batch = sampler.next();
    const Matrix x = take_rows(inputs, batch);
    const Matrix t = take_rows(targets, batch);
    const AnnealPoint ap = anneal_beta(cfg, it);
    const LoRAdaEval eval =
        lorada_objective_and_gradient(state, x, t, cfg.lambda, ap.beta, ap.active);
    adam_a.step(state.VA, eval.grad_va, cfg.learning_rate, it + 1);
    adam_b.step(state.VB, eval.grad_vb, cfg.learning_rate, it + 1);
  }

  const std::vector<std::int32_t> hard_a = hard_commit_codes(a, state.VA, pa);
  const std::vector<std::int32_t> hard_b = hard_commit_codes(b, state.VB, pb);
  const Matrix hard_aq = dequantize(hard_a, a.rows(), a.cols(), pa);
  const Matrix hard_bq = dequantize(hard_b, b.rows(), b.cols(), pb);
  const double hard_err = reconstruction_error(inputs, targets, matmul(hard_aq, hard_bq));

  if (hard_err <= nearest_err) {
    result.codes_a = hard_a;
    result.codes_b = hard_b;
    result.a_q = hard_aq;
    result.b_q = hard_bq;
  }
  result.va = std::move(state.VA);
  result.vb = std::move(state.VB);
  return result;
}

RoundedDense optimize_layer_dense(const Matrix& w, const QuantParams& pw, const Matrix& inputs,
                                  const Matrix& targets, const LoRAdaConfig& cfg) {
  const std::vector<std::int32_t> nearest = quantize_codes(w, pw);
  const Matrix nearest_q = dequantize(nearest, w.rows(), w.cols(), pw);
  const double nearest_err = reconstruction_error(inputs, targets, nearest_q);

  RoundedDense result{nearest, nearest_q};
  if (cfg.iterations == 0) return result;

  DenseRounding state{w, pw, init_rounding_vars(w, pw)};
  AdamState adam(w.rows(), w.cols());
  BatchSampler sampler(inputs.rows(), cfg.batch_size, cfg.seed);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto batch = sampler.next();
    const Matrix x = take_rows(inputs, batch);
    const Matrix t = take_rows(targets, batch);
    const AnnealPoint ap = anneal_beta(cfg, it);
    const LoRAdaEvalDense eval =
        lorada_objective_and_gradient_dense(state, x, t, cfg.lambda, ap.beta, ap.active);
    adam.step(state.VW, eval.grad_vw, cfg.learning_rate, it + 1);
  }

  const std::vector<std::int32_t> hard = hard_commit_codes(w, state.VW, pw);
  const Matrix hard_q = dequantize(hard, w.rows(), w.cols(), pw);
  const double hard_err = reconstruction_error(inputs, targets, hard_q);
  if (hard_err <= nearest_err) result = {hard, hard_q};
  return result;
}

CompressedModel run_sequential_rounding(const Model& model,
                                        const std::vector<LayerPlan>& plans,
                                        const std::vector<std::vector<Candidate>>& fronts,
                                        const AllocationSolution& solution,
                                        const Matrix& calibration, const LoRAdaConfig& cfg) {
  validate_config(cfg);
  if (solution.chosen.size() != model.layers.size())
    throw Error(ErrorCode::ShapeMismatch, "solution does not cover every layer");

  const bool need_float_inputs = cfg.target == LoRAdaConfig::Target::FloatInput;
  ForwardTrace float_trace;
  if (need_float_inputs) float_trace = forward_trace(model, calibration);

  CompressedModel out;
  Matrix x = calibration;  // compressed-propagated input
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    const LayerPlan& plan = plans[l];
    const Candidate& cand = fronts[l][solution.chosen[l]];
    const Matrix& target_input = need_float_inputs ? float_trace.inputs[l] : x;
    const Matrix targets = matmul_nt(target_input, layer.weight);

    CompressedLayer cl;
    cl.name = layer.name;
    cl.kind = cand.kind;
    if (cand.kind == CandidateKind::QuantOnly) {
      cl.bits_w = cand.bits_w;
      cl.params_w = plan.params_w.at(cand.bits_w);
      RoundedDense rounded = optimize_layer_dense(layer.weight, cl.params_w, x, targets, cfg);
      cl.codes_w = std::move(rounded.codes_w);
      cl.w_effective = std::move(rounded.w_q);
    } else {
      cl.rank = cand.rank;
      cl.bits_a = cand.bits_a;
      cl.bits_b = cand.bits_b;
      auto [a, b] = truncate(plan.decomp, cand.rank);
      cl.params_a = plan.params_a.at(cand.bits_a);
      cl.params_b = plan.params_b.at(cand.bits_b);
      cl.params_b.scales.resize(cand.rank);
      cl.params_b.zero_points.resize(cand.rank);
      RoundedFactors rounded =
          optimize_layer_factored(a, b, cl.params_a, cl.params_b, x, targets, cfg);
      cl.codes_a = std::move(rounded.codes_a);
      cl.codes_b = std::move(rounded.codes_b);
      cl.w_effective = matmul(rounded.a_q, rounded.b_q);
    }

    // propagate through the committed layer
    Matrix pre = matmul_nt(x, cl.w_effective);
    for (std::size_t n = 0; n < pre.rows(); ++n)
      for (std::size_t i = 0; i < pre.cols(); ++i) pre(n, i) += layer.bias[i];
    for (std::size_t i = 0; i < pre.size(); ++i)
      pre.data()[i] = apply_activation(layer.activation, pre.data()[i]);
    x = std::move(pre);

    out.layers.push_back(std::move(cl));
  }
  return out;
}

}  // namespace mlorq
