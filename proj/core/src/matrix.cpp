#include "mlorq/matrix.hpp"

#include <cassert>

namespace mlorq {

Matrix matmul(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.rows());
  Matrix out(a.rows(), b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* out_i = out.row(i);
    const double* a_i = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a_i[p];
      if (a_ip == 0.0) continue;
      const double* b_p = b.row(p);
      for (std::size_t j = 0; j < n; ++j) out_i[j] += a_ip * b_p[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  assert(a.cols() == b.cols());
  Matrix out(a.rows(), b.rows());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_i = a.row(i);
    double* out_i = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double* b_j = b.row(j);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a_i[p] * b_j[p];
      out_i[j] = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

double frobenius_sq(const Matrix& m) {
  double acc = 0.0;
  const double* p = m.data();
  for (std::size_t i = 0; i < m.size(); ++i) acc += p[i] * p[i];
  return acc;
}

double frobenius_sq_diff(const Matrix& a, const Matrix& b) {
  assert(a.same_shape(b));
  double acc = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace mlorq
