#pragma once

#include <cstddef>
#include <vector>

namespace b2t {

// Dense row-major matrix of doubles. Sized for 64-channel EEG work; only the
// operations the pipeline needs, not a general linear-algebra library.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

double trace(const Matrix& a);
double max_abs(const Matrix& a);
bool all_finite(const Matrix& a);

// Eigendecomposition of a symmetric matrix: a == vectors * diag(values) *
// vectors^T with values ascending and orthonormal eigenvector columns.
struct SymmetricEigen {
  std::vector<double> values;
  Matrix vectors;
};

// Cyclic Jacobi rotations; throws std::invalid_argument if `a` is not square
// or not symmetric to 1e-10 relative tolerance.
SymmetricEigen eigen_symmetric(const Matrix& a);

// Cholesky-based test for symmetric positive definiteness.
bool is_spd(const Matrix& a);

}  // namespace b2t
