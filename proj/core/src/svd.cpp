#include "mlorq/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlorq/errors.hpp"

namespace mlorq {

namespace {

constexpr int kMaxSweeps = 64;
constexpr double kOrthTol = 1e-15;

// Columns stored contiguously so the rotation kernel streams memory.
struct ColMajor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  ColMajor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* col(std::size_t j) { return data.data() + j * rows; }
  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

void rotate_pair(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

SvdResult jacobi_tall(const Matrix& m_in) {
  const std::size_t m = m_in.rows(), n = m_in.cols();
  ColMajor g(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) g.col(j)[i] = m_in(i, j);
  ColMajor v(n, n);
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* gp = g.col(p);
        double* gq = g.col(q);
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += gp[i] * gp[i];
          beta += gq[i] * gq[i];
          gamma += gp[i] * gq[i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kOrthTol * std::sqrt(alpha * beta)) continue;
        converged = false;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_pair(gp, gq, m, c, s);
        rotate_pair(v.col(p), v.col(q), n, c, s);
      }
    }
  }
  if (!converged)
    throw Error(ErrorCode::SvdNoConvergence,
                "one-sided Jacobi did not converge within the sweep cap");

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double norm_sq = 0.0;
    const double* gj = g.col(j);
    for (std::size_t i = 0; i < m; ++i) norm_sq += gj[i] * gj[i];
    sigma[j] = std::sqrt(norm_sq);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  SvdResult result;
  result.U = Matrix(m, n);
  result.V = Matrix(n, n);
  result.sigma.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    result.sigma[k] = sigma[j];
    const double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
    const double* gj = g.col(j);
    for (std::size_t i = 0; i < m; ++i) result.U(i, k) = gj[i] * inv;
    const double* vj = v.col(j);
    for (std::size_t i = 0; i < n; ++i) result.V(i, k) = vj[i];
  }
  return result;
}

void apply_sign_convention(SvdResult& r) {
  const std::size_t m = r.U.rows(), n = r.V.rows(), k = r.sigma.size();
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = std::abs(r.U(i, col));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (r.U(arg, col) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.U(i, col) = -r.U(i, col);
      for (std::size_t i = 0; i < n; ++i) r.V(i, col) = -r.V(i, col);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0)
    throw Error(ErrorCode::InvalidArgument, "svd of an empty matrix");
  SvdResult result;
  if (m.rows() >= m.cols()) {
    result = jacobi_tall(m);
  } else {
    SvdResult t = jacobi_tall(transpose(m));
    result.U = std::move(t.V);
    result.V = std::move(t.U);
    result.sigma = std::move(t.sigma);
  }
  apply_sign_convention(result);
  return result;
}

}  // namespace mlorq
