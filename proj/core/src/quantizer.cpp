#include "mlorq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "mlorq/errors.hpp"

namespace mlorq {

namespace {

const double kGrid[] = {0.97,   0.98,    0.99,    0.995,   0.9995,
                        0.9997, 0.9999,  0.99995, 0.99999, 1.0};

double clipd(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

int quantize_code(double value, double s, int z, int max_code) {
  const double q = std::round(value / s) + static_cast<double>(z);
  return static_cast<int>(clipd(q, 0.0, static_cast<double>(max_code)));
}

// Order statistic at rank ceil(q * n), clamped into [1, n].
double order_stat(const std::vector<double>& sorted, double q) {
  const double t = q * static_cast<double>(sorted.size());
  long idx = static_cast<long>(std::ceil(t - 1e-9)) - 1;
  idx = std::max(0L, std::min(idx, static_cast<long>(sorted.size()) - 1));
  return sorted[static_cast<std::size_t>(idx)];
}

// Per-row (s, z) from presorted row values for one percentile.
void row_params(const std::vector<double>& sorted, double p, int bits, double& s, int& z) {
  const int max_code = (1 << bits) - 1;
  double hi = order_stat(sorted, p);
  double lo = order_stat(sorted, 1.0 - p);
  // Widen to include zero so it is exactly representable; this also makes
  // z = round(-lo/s) land in [0, max_code] without saturating.
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  const double span = hi - lo;
  if (span <= kScaleEpsilon * max_code) {
    s = kScaleEpsilon;
    z = 0;
    return;
  }
  s = span / static_cast<double>(max_code);
  z = static_cast<int>(clipd(std::round(-lo / s), 0.0, static_cast<double>(max_code)));
}

std::vector<std::vector<double>> sorted_rows(const Matrix& m) {
  std::vector<std::vector<double>> rows(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rows[i].assign(m.row(i), m.row(i) + m.cols());
    std::sort(rows[i].begin(), rows[i].end());
  }
  return rows;
}

struct RowChoice {
  double err = 0.0;
  double s = 0.0;
  int z = 0;
  bool set = false;
};

QuantParams assemble(const std::vector<RowChoice>& choices, int bits) {
  QuantParams params;
  params.bits = bits;
  params.scales.reserve(choices.size());
  params.zero_points.reserve(choices.size());
  for (const RowChoice& c : choices) {
    params.scales.push_back(c.s);
    params.zero_points.push_back(c.z);
  }
  return params;
}

}  // namespace

std::span<const double> percentile_grid() { return kGrid; }

BitSet BitSet::parse(const std::string& csv) {
  BitSet set;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    int b = 0;
    try {
      b = std::stoi(tok);
    } catch (...) {
      throw Error(ErrorCode::InvalidArgument, "bad bit-width token: " + tok);
    }
    if (b < 2 || b > 30)
      throw Error(ErrorCode::InvalidArgument, "bit-width out of range: " + tok);
    set.bits.push_back(b);
  }
  if (set.bits.empty())
    throw Error(ErrorCode::InvalidArgument, "bit-width set is empty");
  std::sort(set.bits.begin(), set.bits.end());
  set.bits.erase(std::unique(set.bits.begin(), set.bits.end()), set.bits.end());
  return set;
}

bool BitSet::contains(int b) const {
  return std::binary_search(bits.begin(), bits.end(), b);
}

const BitSet& default_bitset() {
  static const BitSet set{{2, 3, 4, 6, 8}};
  return set;
}

namespace {

void check_params(const QuantParams& params, std::size_t rows) {
  if (params.scales.size() != rows || params.zero_points.size() != rows)
    throw Error(ErrorCode::ShapeMismatch, "quant params row count mismatch");
}

}  // namespace

Matrix quantize_uniform(const Matrix& m, const QuantParams& params) {
  check_params(params, m.rows());
  Matrix out(m.rows(), m.cols());
  const int max_code = params.max_code();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = params.scales[i];
    const int z = params.zero_points[i];
    const double* src = m.row(i);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j)
      dst[j] = s * (quantize_code(src[j], s, z, max_code) - z);
  }
  return out;
}

std::vector<std::int32_t> quantize_codes(const Matrix& m, const QuantParams& params) {
  check_params(params, m.rows());
  std::vector<std::int32_t> codes(m.size());
  const int max_code = params.max_code();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = params.scales[i];
    const int z = params.zero_points[i];
    const double* src = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j)
      codes[i * m.cols() + j] = quantize_code(src[j], s, z, max_code);
  }
  return codes;
}

Matrix dequantize(const std::vector<std::int32_t>& codes, std::size_t rows, std::size_t cols,
                  const QuantParams& params) {
  check_params(params, rows);
  if (codes.size() != rows * cols)
    throw Error(ErrorCode::ShapeMismatch, "dequantize shape mismatch");
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double s = params.scales[i];
    const int z = params.zero_points[i];
    double* dst = out.row(i);
    for (std::size_t j = 0; j < cols; ++j)
      dst[j] = s * (codes[i * cols + j] - z);
  }
  return out;
}

double rectified_sigmoid(double x) {
  const double sig = 1.0 / (1.0 + std::exp(-x));
  return clipd(sig * (kSoftXi - kSoftGamma) + kSoftGamma, 0.0, 1.0);
}

double rectified_sigmoid_derivative(double x) {
  const double sig = 1.0 / (1.0 + std::exp(-x));
  const double pre = sig * (kSoftXi - kSoftGamma) + kSoftGamma;
  if (pre <= 0.0 || pre >= 1.0) return 0.0;
  return sig * (1.0 - sig) * (kSoftXi - kSoftGamma);
}

double rounding_regularizer(const Matrix& v, double beta) {
  double reg = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double h = rectified_sigmoid(v.data()[i]);
    reg += 1.0 - std::pow(std::abs(2.0 * h - 1.0), beta);
  }
  return reg;
}

std::pair<Matrix, double> soft_quantize(const Matrix& m, const Matrix& v,
                                        const QuantParams& params, double beta) {
  if (!m.same_shape(v))
    throw Error(ErrorCode::ShapeMismatch, "soft_quantize: V shape differs from M");
  check_params(params, m.rows());
  Matrix out(m.rows(), m.cols());
  const double max_code = static_cast<double>(params.max_code());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double s = params.scales[i];
    const double z = static_cast<double>(params.zero_points[i]);
    const double* src = m.row(i);
    const double* vv = v.row(i);
    double* dst = out.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double h = rectified_sigmoid(vv[j]);
      const double q = clipd(std::floor(src[j] / s) + h + z, 0.0, max_code);
      dst[j] = s * (q - z);
    }
  }
  return {std::move(out), rounding_regularizer(v, beta)};
}

QuantParams percentile_params(const Matrix& m, double p, int bits) {
  if (p <= 0.0 || p > 1.0)
    throw Error(ErrorCode::InvalidArgument, "percentile must be in (0, 1]");
  QuantParams params;
  params.bits = bits;
  params.scales.resize(m.rows());
  params.zero_points.resize(m.rows());
  std::vector<double> row(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    row.assign(m.row(i), m.row(i) + m.cols());
    std::sort(row.begin(), row.end());
    row_params(row, p, bits, params.scales[i], params.zero_points[i]);
  }
  return params;
}

QuantParams search_params_hmse(const Matrix& w, const Matrix& c, int bits,
                               std::span<const double> grid) {
  if (!w.same_shape(c))
    throw Error(ErrorCode::ShapeMismatch, "search_params_hmse: C shape differs from W");
  const auto rows = sorted_rows(w);
  const int max_code = (1 << bits) - 1;
  std::vector<RowChoice> best(w.rows());
  for (double p : grid) {
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double s;
      int z;
      row_params(rows[i], p, bits, s, z);
      const double* wr = w.row(i);
      const double* cr = c.row(i);
      double err = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const double dq = s * (quantize_code(wr[j], s, z, max_code) - z);
        const double d = cr[j] * (wr[j] - dq);
        err += d * d;
      }
      // <= keeps the larger percentile on ties (grid scanned ascending).
      if (!best[i].set || err <= best[i].err) best[i] = {err, s, z, true};
    }
  }
  return assemble(best, bits);
}

QuantParams search_params_A(const Matrix& a, const Matrix& b_factor, const Matrix& c, int bits,
                            std::span<const double> grid) {
  if (a.cols() != b_factor.rows() || c.rows() != a.rows() || c.cols() != b_factor.cols())
    throw Error(ErrorCode::ShapeMismatch, "search_params_A: inconsistent shapes");
  const auto rows = sorted_rows(a);
  const int max_code = (1 << bits) - 1;
  const std::size_t r = a.cols(), n_in = b_factor.cols();
  std::vector<RowChoice> best(a.rows());
  std::vector<double> diff(r), noise(n_in);
  for (double p : grid) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s;
      int z;
      row_params(rows[i], p, bits, s, z);
      const double* ar = a.row(i);
      for (std::size_t k = 0; k < r; ++k) {
        const double dq = s * (quantize_code(ar[k], s, z, max_code) - z);
        diff[k] = ar[k] - dq;
      }
      // noise = (A_i - Q(A_i)) * B, accumulated over B's rows
      std::fill(noise.begin(), noise.end(), 0.0);
      for (std::size_t k = 0; k < r; ++k) {
        const double d = diff[k];
        if (d == 0.0) continue;
        const double* br = b_factor.row(k);
        for (std::size_t j = 0; j < n_in; ++j) noise[j] += d * br[j];
      }
      const double* cr = c.row(i);
      double err = 0.0;
      for (std::size_t j = 0; j < n_in; ++j) {
        const double d = cr[j] * noise[j];
        err += d * d;
      }
      if (!best[i].set || err <= best[i].err) best[i] = {err, s, z, true};
    }
  }
  return assemble(best, bits);
}

QuantParams search_params_B(const Matrix& b_factor, int bits, std::span<const double> grid) {
  const auto rows = sorted_rows(b_factor);
  const int max_code = (1 << bits) - 1;
  std::vector<RowChoice> best(b_factor.rows());
  for (double p : grid) {
    for (std::size_t i = 0; i < b_factor.rows(); ++i) {
      double s;
      int z;
      row_params(rows[i], p, bits, s, z);
      const double* br = b_factor.row(i);
      double err = 0.0;
      for (std::size_t j = 0; j < b_factor.cols(); ++j) {
        const double dq = s * (quantize_code(br[j], s, z, max_code) - z);
        const double d = br[j] - dq;
        err += d * d;
      }
      if (!best[i].set || err <= best[i].err) best[i] = {err, s, z, true};
    }
  }
  return assemble(best, bits);
}

}  // namespace mlorq
