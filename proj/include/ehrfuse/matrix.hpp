#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ehrfuse {

/// Dense row-major matrix of doubles. Vectors are stored as 1 x n.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }

  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Matrix& o) const noexcept { return rows == o.rows && cols == o.cols; }

  void fill(double v) noexcept { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Matrix&) const = default;
};

/// out = a * b
inline void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.cols == b.rows);
  out = Matrix(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * out.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += aik * brow[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out;
  matmul(a, b, out);
  return out;
}

/// acc += a^T * b
inline void add_matmul_at_b(const Matrix& a, const Matrix& b, Matrix& acc) {
  assert(a.rows == b.rows && acc.rows == a.cols && acc.cols == b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* brow = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ari = a(r, i);
      if (ari == 0.0) continue;
      double* o = acc.data.data() + i * acc.cols;
      for (std::size_t j = 0; j < b.cols; ++j) o[j] += ari * brow[j];
    }
  }
}

/// acc += a * b^T
inline void add_matmul_a_bt(const Matrix& a, const Matrix& b, Matrix& acc) {
  assert(a.cols == b.cols && acc.rows == a.rows && acc.cols == b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      acc(i, j) += s;
    }
  }
}

inline void add_inplace(Matrix& acc, const Matrix& x) {
  assert(acc.same_shape(x));
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += x.data[i];
}

inline void scale_inplace(Matrix& m, double s) noexcept {
  for (double& v : m.data) v *= s;
}

/// Adds the column sums of x into the 1 x cols row vector acc.
inline void add_column_sums(const Matrix& x, Matrix& acc) {
  assert(acc.rows == 1 && acc.cols == x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols; ++c) acc.data[c] += x(r, c);
  }
}

inline double max_abs(const Matrix& m) noexcept {
  double out = 0.0;
  for (double v : m.data) out = std::max(out, std::abs(v));
  return out;
}

}  // namespace ehrfuse
