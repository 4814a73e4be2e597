#ifndef MLORQ_LOWRANK_HPP
#define MLORQ_LOWRANK_HPP

#include <utility>
#include <vector>

#include "mlorq/matrix.hpp"

namespace mlorq {

/// Quantization-aware split of the row-weighted SVD: A carries the inverse
/// row weights (absorbed later by per-channel scales), B carries the
/// singular-value mass.
struct Decomposition {
  Matrix A;                            // n_out x r_max
  Matrix B;                            // r_max x n_in
  std::vector<double> singular_values; // of diag(Q) * W, non-increasing

  std::size_t r_max() const { return singular_values.size(); }
  bool empty() const { return singular_values.empty(); }
};

/// U, S, V = svd(diag(Q) * W); A = diag(Q)^-1 * U, B = S * V^T.
/// Q must be strictly positive (the netsim zero-row guard ensures this).
Decomposition hessian_weighted_decompose(const Matrix& w, const std::vector<double>& q);

/// First r columns of A and first r rows of B, 1 <= r <= r_max.
std::pair<Matrix, Matrix> truncate(const Decomposition& d, std::size_t r);

}  // namespace mlorq

#endif  // MLORQ_LOWRANK_HPP
