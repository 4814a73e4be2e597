#include <doctest.h>

#include <cmath>
#include <random>

#include "mlorq/errors.hpp"
#include "mlorq/lowrank.hpp"
#include "mlorq/quantizer.hpp"
#include "mlorq/svd.hpp"
#include "test_util.hpp"

using namespace mlorq;
using testutil::random_matrix;

namespace {

double residual_sq(const Matrix& w, const Matrix& a, const Matrix& b,
                   const std::vector<double>& row_weights = {}) {
  const Matrix approx = matmul(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double scale = row_weights.empty() ? 1.0 : row_weights[i];
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const double d = scale * (w(i, j) - approx(i, j));
      acc += d * d;
    }
  }
  return acc;
}

double trailing_sq(const std::vector<double>& sigma, std::size_t r) {
  double acc = 0.0;
  for (std::size_t k = r; k < sigma.size(); ++k) acc += sigma[k] * sigma[k];
  return acc;
}

// Random orthonormal columns by Gram-Schmidt; oracle machinery only.
Matrix random_orthonormal(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Matrix q = random_matrix(rng, rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t i = 0; i < rows; ++i) dot += q(i, c) * q(i, prev);
      for (std::size_t i = 0; i < rows; ++i) q(i, c) -= dot * q(i, prev);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < rows; ++i) norm += q(i, c) * q(i, c);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < rows; ++i) q(i, c) /= norm;
  }
  return q;
}

void check_orthonormal_columns(const Matrix& m, double tol) {
  for (std::size_t a = 0; a < m.cols(); ++a)
    for (std::size_t b = a; b < m.cols(); ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) dot += m(i, a) * m(i, b);
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < tol);
    }
}

}  // namespace

TEST_CASE("svd reconstructs random matrices with orthonormal factors") {
  std::mt19937_64 rng(61);
  for (auto [m, n] : {std::pair<std::size_t, std::size_t>{8, 5},
                      {5, 8},
                      {6, 6},
                      {16, 12},
                      {1, 4},
                      {4, 1}}) {
    const Matrix w = random_matrix(rng, m, n);
    const SvdResult s = svd(w);
    const std::size_t k = std::min(m, n);
    REQUIRE(s.sigma.size() == k);
    for (std::size_t i = 0; i + 1 < k; ++i) CHECK(s.sigma[i] >= s.sigma[i + 1]);
    check_orthonormal_columns(s.U, 1e-12);
    check_orthonormal_columns(s.V, 1e-12);

    Matrix us = s.U;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < k; ++c) us(i, c) *= s.sigma[c];
    const Matrix rebuilt = matmul_nt(us, s.V);
    CHECK(frobenius_sq_diff(rebuilt, w) < 1e-20 * std::max(1.0, frobenius_sq(w)) + 1e-24);
  }
}

TEST_CASE("singular values of a constructed factorization are recovered to 1e-10") {
  std::mt19937_64 rng(67);
  const std::size_t m = 24, n = 17;
  const Matrix u0 = random_orthonormal(rng, m, n);
  const Matrix v0 = random_orthonormal(rng, n, n);
  std::vector<double> sigma0(n);
  for (std::size_t i = 0; i < n; ++i)
    sigma0[i] = std::pow(10.0, 2.0 - 6.0 * static_cast<double>(i) / (n - 1));
  Matrix us = u0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < n; ++c) us(i, c) *= sigma0[c];
  const Matrix w = matmul_nt(us, v0);

  const SvdResult s = svd(w);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(std::abs(s.sigma[i] - sigma0[i]) <= 1e-10 * sigma0[i]);
}

TEST_CASE("sign convention: the largest-magnitude entry of each U column is positive") {
  std::mt19937_64 rng(71);
  const Matrix w = random_matrix(rng, 7, 5);
  const SvdResult s = svd(w);
  for (std::size_t c = 0; c < s.sigma.size(); ++c) {
    double best = 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < s.U.rows(); ++i)
      if (std::abs(s.U(i, c)) > best) {
        best = std::abs(s.U(i, c));
        arg = i;
      }
    CHECK(s.U(arg, c) >= 0.0);
  }
}

TEST_CASE("diagonal weight matrix: rank-2 truncation is Eckart-Young exact") {
  Matrix w(3, 3, 0.0);
  w(0, 0) = 3.0;
  w(1, 1) = 2.0;
  w(2, 2) = 1.0;
  const Decomposition d = hessian_weighted_decompose(w, {1.0, 1.0, 1.0});
  auto [a2, b2] = truncate(d, 2);
  const Matrix approx = matmul(a2, b2);
  Matrix expect(3, 3, 0.0);
  expect(0, 0) = 3.0;
  expect(1, 1) = 2.0;
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(approx.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-10));
  CHECK(residual_sq(w, a2, b2) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("unit weights: residual equals trailing squared singular values for all r") {
  std::mt19937_64 rng(73);
  const Matrix w = random_matrix(rng, 8, 6);
  const std::vector<double> ones(8, 1.0);
  const Decomposition d = hessian_weighted_decompose(w, ones);
  const SvdResult reference = svd(w);
  for (std::size_t r = 1; r <= 6; ++r) {
    auto [a, b] = truncate(d, r);
    CHECK(residual_sq(w, a, b) ==
          doctest::Approx(trailing_sq(reference.sigma, r)).epsilon(1e-8));
  }
}

TEST_CASE("weighted residual equals trailing singular values of diag(Q) W") {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix w = random_matrix(rng, 8, 6);
    const std::vector<double> q = testutil::random_positive_vector(rng, 8);
    const Decomposition d = hessian_weighted_decompose(w, q);

    Matrix qw(8, 6);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 6; ++j) qw(i, j) = q[i] * w(i, j);
    const SvdResult reference = svd(qw);

    for (std::size_t r = 1; r <= 6; ++r) {
      auto [a, b] = truncate(d, r);
      const double expected = trailing_sq(reference.sigma, r);
      const double got = residual_sq(w, a, b, q);
      CHECK(got == doctest::Approx(expected).epsilon(1e-8));
    }
  }
}

TEST_CASE("full-rank truncation reconstructs W within 1e-6 relative") {
  std::mt19937_64 rng(83);
  const Matrix w = random_matrix(rng, 10, 7);
  const std::vector<double> q = testutil::random_positive_vector(rng, 10);
  const Decomposition d = hessian_weighted_decompose(w, q);
  auto [a, b] = truncate(d, d.r_max());
  CHECK(residual_sq(w, a, b) <= 1e-12 * frobenius_sq(w));
}

TEST_CASE("rank-1 matrix is exact at r = 1") {
  std::mt19937_64 rng(89);
  const Matrix u = random_matrix(rng, 6, 1);
  const Matrix v = random_matrix(rng, 1, 5);
  const Matrix w = matmul(u, v);
  const Decomposition d = hessian_weighted_decompose(w, std::vector<double>(6, 1.0));
  auto [a, b] = truncate(d, 1);
  CHECK(residual_sq(w, a, b) <= 1e-18 * frobenius_sq(w) + 1e-22);
}

TEST_CASE("weighted residual is non-increasing in rank") {
  std::mt19937_64 rng(97);
  const Matrix w = random_matrix(rng, 9, 7);
  const std::vector<double> q = testutil::random_positive_vector(rng, 9);
  const Decomposition d = hessian_weighted_decompose(w, q);
  double prev = 1e300;
  for (std::size_t r = 1; r <= d.r_max(); ++r) {
    auto [a, b] = truncate(d, r);
    const double res = residual_sq(w, a, b, q);
    CHECK(res <= prev + 1e-12);
    prev = res;
  }
}

TEST_CASE("upper-bound property: Hadamard error below row-sum weighted error") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 2 + rng() % 6, cols = 2 + rng() % 6;
    Matrix c = random_matrix(rng, rows, cols);
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = std::abs(c.data()[i]);
    std::vector<double> q(rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) q[i] += c(i, j);

    const Matrix w = random_matrix(rng, rows, cols);
    const Decomposition d = hessian_weighted_decompose(w, q);
    for (std::size_t r = 1; r <= d.r_max(); ++r) {
      auto [a, b] = truncate(d, r);
      const Matrix approx = matmul(a, b);
      double lhs = 0.0, rhs = 0.0;
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
          const double e = w(i, j) - approx(i, j);
          lhs += c(i, j) * c(i, j) * e * e;
          rhs += q[i] * q[i] * e * e;
        }
      CHECK(lhs <= rhs + 1e-12 * (1.0 + rhs));
    }
  }
}

TEST_CASE("row scaling is absorbed by the per-channel quantization scale") {
  std::mt19937_64 rng(103);
  const Matrix a = random_matrix(rng, 5, 4);
  const std::vector<double> d = testutil::random_positive_vector(rng, 5);
  QuantParams p = percentile_params(a, 1.0, 3);

  Matrix scaled_a(5, 4);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) scaled_a(i, j) = d[i] * a(i, j);
  QuantParams scaled_p = p;
  for (std::size_t i = 0; i < 5; ++i) scaled_p.scales[i] *= d[i];

  const Matrix q_scaled = quantize_uniform(scaled_a, scaled_p);
  const Matrix q_base = quantize_uniform(a, p);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(q_scaled(i, j) == doctest::Approx(d[i] * q_base(i, j)).epsilon(1e-12));
}

TEST_CASE("truncate validates the rank range; bad Q is rejected") {
  std::mt19937_64 rng(107);
  const Matrix w = random_matrix(rng, 4, 3);
  const Decomposition d = hessian_weighted_decompose(w, std::vector<double>(4, 1.0));
  CHECK_THROWS_AS(truncate(d, 0), Error);
  CHECK_THROWS_AS(truncate(d, 4), Error);
  CHECK_THROWS_AS(hessian_weighted_decompose(w, std::vector<double>(4, 0.0)), Error);
  CHECK_THROWS_AS(hessian_weighted_decompose(w, std::vector<double>(3, 1.0)), Error);
}
