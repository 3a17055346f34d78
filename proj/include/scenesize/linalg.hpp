#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace scenesize::linalg {

/// Minimal row-major dense matrix, sized for normal-equation systems whose
/// dimension is the number of size clusters (tens at most).
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

 private:
  std::size_t rows_, cols_;
  std::vector<double> data_;
};

/// Gaussian elimination with partial pivoting. Returns nullopt when the
/// system is singular to working precision.
inline std::optional<std::vector<double>> solve_dense(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  if (n != a.cols() || n != b.size()) return std::nullopt;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    double best = std::fabs(a(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::fabs(a(r, col));
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (best == 0.0 || !std::isfinite(best)) return std::nullopt;
    if (pivot != col) {
      for (std::size_t c = col; c < n; ++c) std::swap(a(pivot, c), a(col, c));
      std::swap(b[pivot], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a(r, col) / a(col, col);
      if (factor == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= factor * a(col, c);
      b[r] -= factor * b[col];
    }
  }

  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double sum = b[i];
    for (std::size_t c = i + 1; c < n; ++c) sum -= a(i, c) * x[c];
    x[i] = sum / a(i, i);
    if (!std::isfinite(x[i])) return std::nullopt;
  }
  return x;
}

}  // namespace scenesize::linalg
