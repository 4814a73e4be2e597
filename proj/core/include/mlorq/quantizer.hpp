#ifndef MLORQ_QUANTIZER_HPP
#define MLORQ_QUANTIZER_HPP

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlorq/matrix.hpp"

namespace mlorq {

/// Per-output-channel affine quantization parameters.
struct QuantParams {
  std::vector<double> scales;       // one per row, > 0
  std::vector<int> zero_points;     // one per row, in [0, 2^bits - 1]
  int bits = 8;

  int max_code() const { return (1 << bits) - 1; }
};

struct BitSet {
  std::vector<int> bits;  // sorted ascending, all >= 2

  static BitSet parse(const std::string& csv);
  bool contains(int b) const;
};

/// Default bit-width options {2, 3, 4, 6, 8}.
const BitSet& default_bitset();

/// Percentile grid for the clip-range line search:
/// {0.97, 0.98, 0.99, 0.995, 0.9995, 0.9997, 0.9999, 0.99995, 0.99999, 1}.
std::span<const double> percentile_grid();

inline constexpr double kScaleEpsilon = 1e-12;

/// Rounds to the nearest grid point, half away from zero, and clips codes
/// to [0, 2^b - 1]. Rows use their own (s, z).
Matrix quantize_uniform(const Matrix& m, const QuantParams& params);

/// Integer codes of quantize_uniform, row-major.
std::vector<std::int32_t> quantize_codes(const Matrix& m, const QuantParams& params);
Matrix dequantize(const std::vector<std::int32_t>& codes, std::size_t rows, std::size_t cols,
                  const QuantParams& params);

/// Rectified sigmoid h(x) = clip(sigmoid(x) * (xi - gamma) + gamma, 0, 1)
/// with xi = 1.1, gamma = -0.1.
double rectified_sigmoid(double x);
/// Derivative of h where the clip is inactive, 0 where saturated.
double rectified_sigmoid_derivative(double x);

inline constexpr double kSoftXi = 1.1;
inline constexpr double kSoftGamma = -0.1;

/// Soft quantizer: s * (clip(floor(M/s) + h(V) + z, 0, 2^b - 1) - z), plus
/// the rounding regularizer sum(1 - |2 h(V) - 1|^beta).
std::pair<Matrix, double> soft_quantize(const Matrix& m, const Matrix& v,
                                        const QuantParams& params, double beta);

double rounding_regularizer(const Matrix& v, double beta);

/// Clip-range parameters for one percentile p: per row, the two-sided
/// percentile range widened to include zero; s = span / (2^b - 1), floored
/// at kScaleEpsilon; z = round(-lo / s).
QuantParams percentile_params(const Matrix& m, double p, int bits);

/// Grid candidate minimizing || C o (W - Q(W, phi, b)) ||_F^2, rows chosen
/// independently; ties go to the larger percentile (wider range).
QuantParams search_params_hmse(const Matrix& w, const Matrix& c, int bits,
                               std::span<const double> grid = percentile_grid());

/// Grid candidate minimizing || C o (W - Q(A, phi, b) * B) ||_F^2 at full
/// rank, with W = A * B. Parameters are frozen for all ranks afterwards.
QuantParams search_params_A(const Matrix& a, const Matrix& b_factor, const Matrix& c, int bits,
                            std::span<const double> grid = percentile_grid());

/// Grid candidate minimizing plain per-row MSE || B - Q(B, phi, b) ||_F^2.
QuantParams search_params_B(const Matrix& b_factor, int bits,
                            std::span<const double> grid = percentile_grid());

}  // namespace mlorq

#endif  // MLORQ_QUANTIZER_HPP
