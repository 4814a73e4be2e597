#ifndef MLORQ_MATRIX_HPP
#define MLORQ_MATRIX_HPP

#include <cstddef>
#include <vector>

namespace mlorq {

/// Dense row-major matrix of doubles. All internal arithmetic runs in
/// 64-bit; 32-bit storage happens only at the container boundary.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double value = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, value) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a (m x k) * b (k x n)
Matrix matmul(const Matrix& a, const Matrix& b);

/// a (m x k) * b^T, with b stored (n x k). Row-major friendly.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

double frobenius_sq(const Matrix& m);

/// ||a - b||_F^2
double frobenius_sq_diff(const Matrix& a, const Matrix& b);

}  // namespace mlorq

#endif  // MLORQ_MATRIX_HPP
