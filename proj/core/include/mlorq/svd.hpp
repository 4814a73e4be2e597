#ifndef MLORQ_SVD_HPP
#define MLORQ_SVD_HPP

#include <vector>

#include "mlorq/matrix.hpp"

namespace mlorq {

/// Thin SVD, M = U * diag(sigma) * V^T with U (m x k), V (n x k),
/// k = min(m, n). Singular values are sorted non-increasing; each column of
/// U is oriented so its largest-magnitude entry is positive.
struct SvdResult {
  Matrix U;
  std::vector<double> sigma;
  Matrix V;
};

/// One-sided Jacobi. Throws SvdNoConvergence if the sweep cap is reached.
SvdResult svd(const Matrix& m);

}  // namespace mlorq

#endif  // MLORQ_SVD_HPP
