#pragma once

#include <cstddef>
#include <vector>

namespace chartmix {

class Rng;

// Dense row-major matrix of doubles. Row vectors are 1xN matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);

  // Xavier-uniform init, deterministic from the rng stream.
  static Matrix xavier(std::size_t r, std::size_t c, Rng& rng);

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;

  Matrix transposed() const;
};

// Exact comparison, shape and every entry.
bool operator==(const Matrix& a, const Matrix& b);
inline bool operator!=(const Matrix& a, const Matrix& b) { return !(a == b); }

// Largest absolute elementwise difference; infinity on shape mismatch.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace chartmix
