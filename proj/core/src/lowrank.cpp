#include "mlorq/lowrank.hpp"

#include "mlorq/errors.hpp"
#include "mlorq/svd.hpp"

namespace mlorq {

Decomposition hessian_weighted_decompose(const Matrix& w, const std::vector<double>& q) {
  if (q.size() != w.rows())
    throw Error(ErrorCode::ShapeMismatch, "Q length must equal the weight row count");
  for (double qi : q)
    if (!(qi > 0.0))
      throw Error(ErrorCode::InvalidArgument, "Q must be strictly positive");

  Matrix weighted(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double qi = q[i];
    const double* src = w.row(i);
    double* dst = weighted.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) dst[j] = qi * src[j];
  }

  SvdResult s = svd(weighted);
  const std::size_t k = s.sigma.size();

  Decomposition d;
  d.singular_values = std::move(s.sigma);
  d.A = Matrix(w.rows(), k);
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double inv_q = 1.0 / q[i];
    for (std::size_t c = 0; c < k; ++c) d.A(i, c) = inv_q * s.U(i, c);
  }
  d.B = Matrix(k, w.cols());
  for (std::size_t r = 0; r < k; ++r) {
    const double sv = d.singular_values[r];
    for (std::size_t j = 0; j < w.cols(); ++j) d.B(r, j) = sv * s.V(j, r);
  }
  return d;
}

std::pair<Matrix, Matrix> truncate(const Decomposition& d, std::size_t r) {
  if (r < 1 || r > d.r_max())
    throw Error(ErrorCode::IndexOutOfRange,
                "rank " + std::to_string(r) + " outside [1, " +
                    std::to_string(d.r_max()) + "]");
  Matrix a(d.A.rows(), r);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t c = 0; c < r; ++c) a(i, c) = d.A(i, c);
  Matrix b(r, d.B.cols());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) b(i, j) = d.B(i, j);
  return {std::move(a), std::move(b)};
}

}  // namespace mlorq
