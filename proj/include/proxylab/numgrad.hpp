#pragma once

// Forward/backward primitives. Each returns the forward value together with a
// pullback that maps an output gradient to the input gradient(s); every
// downstream module states its gradient contract by composing these.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "proxylab/errors.hpp"
#include "proxylab/matrix.hpp"

namespace proxylab {

// Grad is the pullback's return type: Matrix for unary primitives,
// MatrixPair for binary ones, or a struct of parameter gradients.
template <class Grad = Matrix>
struct GradPair {
  Matrix value;
  std::function<Grad(const Matrix&)> pullback;
};

using MatrixPair = std::pair<Matrix, Matrix>;

inline constexpr double kNormEpsilon = 1e-12;

namespace instrumentation {

// Number of pairwise distance (or similarity) evaluations performed on this
// thread. Loss code uses it to assert its per-batch cost.
inline thread_local std::uint64_t distance_evaluations = 0;

inline void reset_distance_count() noexcept { distance_evaluations = 0; }
inline std::uint64_t distance_count() noexcept { return distance_evaluations; }

}  // namespace instrumentation

namespace detail {

inline void ensure_finite(const Matrix& m, const char* op) {
  if (!all_finite(m)) throw NumericError(std::string(op) + ": produced a non-finite value");
}

inline void require_grad_shape(const Matrix& g, std::size_t rows, std::size_t cols,
                               const char* op) {
  if (g.rows() != rows || g.cols() != cols) {
    throw ShapeError(std::string(op) + " pullback: gradient " + g.shape_string() +
                     " does not match output " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a * b^T without materialising the transpose.
inline Matrix multiply_bt(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
  return out;
}

// a^T * b
inline Matrix multiply_at(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = arow[i];
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

}  // namespace detail

inline GradPair<MatrixPair> matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " +
                     b.shape_string());
  }
  Matrix value = detail::multiply(a, b);
  detail::ensure_finite(value, "matmul");
  return {std::move(value), [a, b](const Matrix& g) {
            detail::require_grad_shape(g, a.rows(), b.cols(), "matmul");
            return MatrixPair{detail::multiply_bt(g, b), detail::multiply_at(a, g)};
          }};
}

// Adds the 1 x cols bias row to every row of x.
inline GradPair<MatrixPair> add_row_bias(const Matrix& x, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_row_bias: bias " + bias.shape_string() + " for input " +
                     x.shape_string());
  }
  Matrix value = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) value(r, c) += bias(0, c);
  detail::ensure_finite(value, "add_row_bias");
  const std::size_t rows = x.rows(), cols = x.cols();
  return {std::move(value), [rows, cols](const Matrix& g) {
            detail::require_grad_shape(g, rows, cols, "add_row_bias");
            Matrix gb(1, cols);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) gb(0, c) += g(r, c);
            return MatrixPair{g, std::move(gb)};
          }};
}

// Subgradient at exactly zero is zero.
inline GradPair<> relu(const Matrix& x) {
  Matrix value = x;
  for (double& v : value.data()) v = v > 0.0 ? v : 0.0;
  return {std::move(value), [x](const Matrix& g) {
            detail::require_grad_shape(g, x.rows(), x.cols(), "relu");
            Matrix gx(x.rows(), x.cols());
            for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? g[i] : 0.0;
            return gx;
          }};
}

// Row-wise x / ||x||_2. Rows with norm <= kNormEpsilon are rejected.
inline GradPair<> l2_normalize(const Matrix& x) {
  Matrix unit(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row(r)) s += v * v;
    const double n = std::sqrt(s);
    if (!(n > kNormEpsilon)) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " has norm " +
                                 std::to_string(n) + " (<= 1e-12)");
    }
    norms[r] = n;
    for (std::size_t c = 0; c < x.cols(); ++c) unit(r, c) = x(r, c) / n;
  }
  return {unit, [unit, norms = std::move(norms)](const Matrix& g) {
            detail::require_grad_shape(g, unit.rows(), unit.cols(), "l2_normalize");
            Matrix gx(unit.rows(), unit.cols());
            for (std::size_t r = 0; r < unit.rows(); ++r) {
              auto u = unit.row(r);
              auto gr = g.row(r);
              double dot = 0.0;
              for (std::size_t c = 0; c < u.size(); ++c) dot += u[c] * gr[c];
              for (std::size_t c = 0; c < u.size(); ++c)
                gx(r, c) = (gr[c] - u[c] * dot) / norms[r];
            }
            return gx;
          }};
}

// Affine-free layer norm over each row, biased variance.
inline GradPair<> layer_norm(const Matrix& x, double epsilon) {
  if (x.cols() < 2) {
    throw ParameterError("layer_norm: needs at least 2 columns, got " + x.shape_string());
  }
  if (!(epsilon >= 0.0)) throw ParameterError("layer_norm: epsilon must be non-negative");
  const std::size_t n = x.cols();
  Matrix y(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double denom = std::sqrt(var + epsilon);
    if (!(denom > 0.0)) {
      throw DegenerateInputError("layer_norm: zero variance in row " + std::to_string(r) +
                                 " with epsilon 0");
    }
    inv_std[r] = 1.0 / denom;
    for (std::size_t c = 0; c < n; ++c) y(r, c) = (xr[c] - mean) * inv_std[r];
  }
  detail::ensure_finite(y, "layer_norm");
  return {y, [y, inv_std = std::move(inv_std)](const Matrix& g) {
            detail::require_grad_shape(g, y.rows(), y.cols(), "layer_norm");
            const std::size_t n = y.cols();
            const double inv_n = 1.0 / static_cast<double>(n);
            Matrix gx(y.rows(), n);
            for (std::size_t r = 0; r < y.rows(); ++r) {
              auto yr = y.row(r);
              auto gr = g.row(r);
              double g_mean = 0.0, gy_mean = 0.0;
              for (std::size_t c = 0; c < n; ++c) {
                g_mean += gr[c];
                gy_mean += gr[c] * yr[c];
              }
              g_mean *= inv_n;
              gy_mean *= inv_n;
              for (std::size_t c = 0; c < n; ++c)
                gx(r, c) = inv_std[r] * (gr[c] - g_mean - yr[c] * gy_mean);
            }
            return gx;
          }};
}

// D[i][j] = ||a_i - b_j||^2, evaluated as a sum of squared differences so the
// result is exactly non-negative and exactly symmetric for a == b.
inline GradPair<MatrixPair> pairwise_sqdist(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("pairwise_sqdist: dimension mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
  Matrix d(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double diff = ai[k] - bj[k];
        s += diff * diff;
      }
      d(i, j) = s;
    }
  }
  instrumentation::distance_evaluations += a.rows() * b.rows();
  detail::ensure_finite(d, "pairwise_sqdist");
  return {std::move(d), [a, b](const Matrix& g) {
            detail::require_grad_shape(g, a.rows(), b.rows(), "pairwise_sqdist");
            Matrix ga(a.rows(), a.cols());
            Matrix gb(b.rows(), b.cols());
            for (std::size_t i = 0; i < a.rows(); ++i) {
              for (std::size_t j = 0; j < b.rows(); ++j) {
                const double w = 2.0 * g(i, j);
                if (w == 0.0) continue;
                for (std::size_t k = 0; k < a.cols(); ++k) {
                  const double diff = w * (a(i, k) - b(j, k));
                  ga(i, k) += diff;
                  gb(j, k) -= diff;
                }
              }
            }
            return MatrixPair{std::move(ga), std::move(gb)};
          }};
}

// out[r][i] = x[r][i]/T - logsumexp_j(x[r][j]/T), max-shifted.
inline GradPair<> log_softmax_rows(const Matrix& x, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ParameterError("log_softmax_rows: temperature must be positive, got " +
                         std::to_string(temperature));
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : xr) mx = std::max(mx, v / temperature);
    double s = 0.0;
    for (double v : xr) s += std::exp(v / temperature - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = xr[c] / temperature - lse;
  }
  detail::ensure_finite(out, "log_softmax_rows");
  return {out, [out, temperature](const Matrix& g) {
            detail::require_grad_shape(g, out.rows(), out.cols(), "log_softmax_rows");
            Matrix gx(out.rows(), out.cols());
            for (std::size_t r = 0; r < out.rows(); ++r) {
              double gsum = 0.0;
              for (double v : g.row(r)) gsum += v;
              for (std::size_t c = 0; c < out.cols(); ++c)
                gx(r, c) = (g(r, c) - std::exp(out(r, c)) * gsum) / temperature;
            }
            return gx;
          }};
}

// A scalar function together with its analytic gradient.
struct ScalarGrad {
  double value;
  Matrix grad;
};

// Max over entries of |analytic - central difference| / max(1, |analytic|).
template <class F>
  requires std::is_invocable_r_v<ScalarGrad, F, const Matrix&>
double grad_check(F&& f, const Matrix& x, double h = 1e-5) {
  if (!(h > 0.0)) throw ParameterError("grad_check: step must be positive");
  const ScalarGrad at = f(x);
  if (!std::isfinite(at.value) || !all_finite(at.grad)) {
    throw NumericError("grad_check: non-finite evaluation at the base point");
  }
  if (!at.grad.same_shape(x)) {
    throw ShapeError("grad_check: gradient " + at.grad.shape_string() + " for input " +
                     x.shape_string());
  }
  double worst = 0.0;
  Matrix probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(std::as_const(probe)).value;
    probe[i] = x[i] - h;
    const double down = f(std::as_const(probe)).value;
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("grad_check: non-finite evaluation at perturbed entry " +
                         std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = at.grad[i];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return worst;
}

}  // namespace proxylab
