#include "mlorq/netsim.hpp"

#include <cmath>

#include "mlorq/errors.hpp"

namespace mlorq {

namespace {

// tanh approximation of gelu, kept in sync with the derivative below so
// finite-difference checks agree.
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

Matrix linear_forward(const Matrix& x, const Layer& layer, const Matrix& weight) {
  Matrix y = matmul_nt(x, weight);
  for (std::size_t n = 0; n < y.rows(); ++n) {
    double* row = y.row(n);
    for (std::size_t i = 0; i < y.cols(); ++i) row[i] += layer.bias[i];
  }
  return y;
}

Matrix activate(const Matrix& pre, Activation a) {
  if (a == Activation::None) return pre;
  Matrix out = pre;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = apply_activation(a, out.data()[i]);
  return out;
}

}  // namespace

double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::None: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Gelu: return gelu(x);
  }
  return x;
}

double activation_derivative(Activation a, double x) {
  switch (a) {
    case Activation::None: return 1.0;
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Gelu: return gelu_derivative(x);
  }
  return 1.0;
}

ForwardTrace forward_trace(const Model& model, const Matrix& inputs) {
  if (model.layers.empty())
    throw Error(ErrorCode::InvalidArgument, "model has no layers");
  if (inputs.cols() != model.layers.front().n_in())
    throw Error(ErrorCode::ShapeMismatch,
                "input batch has " + std::to_string(inputs.cols()) +
                    " features, layer 0 expects " +
                    std::to_string(model.layers.front().n_in()));

  ForwardTrace trace;
  trace.inputs.reserve(model.layers.size());
  trace.preacts.reserve(model.layers.size());
  Matrix x = inputs;
  for (const Layer& layer : model.layers) {
    trace.inputs.push_back(x);
    Matrix pre = linear_forward(x, layer, layer.weight);
    x = activate(pre, layer.activation);
    trace.preacts.push_back(std::move(pre));
  }
  trace.output = std::move(x);
  return trace;
}

Matrix output_with_layer_replaced(const Model& model, const ForwardTrace& trace,
                                  std::size_t layer_index, const Matrix& replacement) {
  if (layer_index >= model.layers.size())
    throw Error(ErrorCode::IndexOutOfRange,
                "layer index " + std::to_string(layer_index) + " out of range");
  const Layer& target = model.layers[layer_index];
  if (replacement.rows() != target.n_out() || replacement.cols() != target.n_in())
    throw Error(ErrorCode::ShapeMismatch,
                "replacement weight shape does not match layer '" + target.name + "'");

  Matrix x = activate(linear_forward(trace.inputs[layer_index], target, replacement),
                      target.activation);
  for (std::size_t l = layer_index + 1; l < model.layers.size(); ++l) {
    const Layer& layer = model.layers[l];
    x = activate(linear_forward(x, layer, layer.weight), layer.activation);
  }
  return x;
}

HessianWeights make_hessian_weights(Matrix C) {
  HessianWeights hw;
  hw.Q.assign(C.rows(), 0.0);
  for (std::size_t i = 0; i < C.rows(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < C.cols(); ++j) sum += C(i, j);
    if (sum == 0.0) {
      for (std::size_t j = 0; j < C.cols(); ++j) C(i, j) = kHessianZeroRowEpsilon;
      sum = kHessianZeroRowEpsilon * static_cast<double>(C.cols());
    }
    hw.Q[i] = sum;
  }
  hw.C = std::move(C);
  return hw;
}

std::vector<HessianWeights> estimate_hessian_diag(const Model& model,
                                                  const Matrix& calibration) {
  if (calibration.rows() == 0)
    throw Error(ErrorCode::EmptyCalibration, "calibration batch is empty");

  const std::size_t num_layers = model.layers.size();
  const std::size_t num_samples = calibration.rows();
  ForwardTrace trace = forward_trace(model, calibration);
  const std::size_t d_out = trace.output.cols();

  // accum[l](i, j) = sum_n a_i(n) * x_j(n)^2
  std::vector<Matrix> accum(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l)
    accum[l] = Matrix(model.layers[l].n_out(), model.layers[l].n_in());

  for (std::size_t n = 0; n < num_samples; ++n) {
    // J = d output / d preact(l), built backwards from the last layer.
    Matrix J;
    for (std::size_t l = num_layers; l-- > 0;) {
      const Layer& layer = model.layers[l];
      const double* pre = trace.preacts[l].row(n);
      if (l + 1 == num_layers) {
        J = Matrix(d_out, layer.n_out());
        for (std::size_t i = 0; i < layer.n_out(); ++i)
          J(i, i) = activation_derivative(layer.activation, pre[i]);
      } else {
        // J <- J_next * W_{l+1} * diag(act'(preact_l))
        Matrix JW = matmul(J, model.layers[l + 1].weight);
        for (std::size_t k = 0; k < JW.rows(); ++k) {
          double* row = JW.row(k);
          for (std::size_t i = 0; i < JW.cols(); ++i)
            row[i] *= activation_derivative(layer.activation, pre[i]);
        }
        J = std::move(JW);
      }

      const double* x = trace.inputs[l].row(n);
      Matrix& acc = accum[l];
      for (std::size_t i = 0; i < layer.n_out(); ++i) {
        double a_i = 0.0;
        for (std::size_t k = 0; k < J.rows(); ++k) a_i += J(k, i) * J(k, i);
        double* acc_row = acc.row(i);
        for (std::size_t j = 0; j < layer.n_in(); ++j) acc_row[j] += a_i * x[j] * x[j];
      }
    }
  }

  std::vector<HessianWeights> out;
  out.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    Matrix C = std::move(accum[l]);
    for (std::size_t i = 0; i < C.size(); ++i) C.data()[i] = std::sqrt(C.data()[i]);
    out.push_back(make_hessian_weights(std::move(C)));
  }
  return out;
}

std::vector<HessianWeights> identity_hessians(const Model& model) {
  std::vector<HessianWeights> out;
  out.reserve(model.layers.size());
  for (const Layer& layer : model.layers)
    out.push_back(make_hessian_weights(Matrix(layer.n_out(), layer.n_in(), 1.0)));
  return out;
}

}  // namespace mlorq
