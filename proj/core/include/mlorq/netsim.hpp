#ifndef MLORQ_NETSIM_HPP
#define MLORQ_NETSIM_HPP

#include <vector>

#include "mlorq/matrix.hpp"
#include "mlorq/model.hpp"

namespace mlorq {

double apply_activation(Activation a, double x);
double activation_derivative(Activation a, double x);

/// Cached per-layer batches from one float forward pass.
struct ForwardTrace {
  std::vector<Matrix> inputs;    // inputs[l] = x_l, N x n_in(l)
  std::vector<Matrix> preacts;   // preacts[l] = W_l x_l + b_l, N x n_out(l)
  Matrix output;                 // final post-activation batch
};

ForwardTrace forward_trace(const Model& model, const Matrix& inputs);

/// Network output with layer `layer_index` swapped for `replacement`,
/// recomputed from the cached float input of that layer onward. Layers in
/// front stay floating point.
Matrix output_with_layer_replaced(const Model& model, const ForwardTrace& trace,
                                  std::size_t layer_index, const Matrix& replacement);

/// Elementwise weighting C (square-rooted diagonal Hessian surrogate) and its
/// per-row sums Q. Rows of C that are entirely zero are replaced by epsilon so
/// diag(Q) stays invertible.
struct HessianWeights {
  Matrix C;               // n_out x n_in, non-negative
  std::vector<double> Q;  // Q[i] = sum_j C[i][j]
};

inline constexpr double kHessianZeroRowEpsilon = 1e-8;

/// Builds HessianWeights from a raw non-negative weight matrix, applying the
/// zero-row guard and the row-sum bound.
HessianWeights make_hessian_weights(Matrix C);

/// Gauss-Newton diagonal estimate over the calibration batch:
///   C[i][j] = sqrt( sum_n a_i(n) * x_j(n)^2 ),  a_i(n) = sum_k J(n)[k][i]^2,
/// J(n) the Jacobian of the network output w.r.t. layer l's pre-activation,
/// computed analytically through the linear/elementwise chain.
std::vector<HessianWeights> estimate_hessian_diag(const Model& model, const Matrix& calibration);

/// All-ones fallback weighting.
std::vector<HessianWeights> identity_hessians(const Model& model);

}  // namespace mlorq

#endif  // MLORQ_NETSIM_HPP
