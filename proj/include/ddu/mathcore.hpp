#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ddu {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  Matrix transposed() const;
  bool all_finite() const;
  double max_abs() const;

  /// Appends a row; the first row fixes the column count.
  void append_row(std::span<const double> values);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// out = a * b^T. Shapes: (n x k) * (m x k)^T -> (n x m).
Matrix matmul_bt(const Matrix& a, const Matrix& b);
/// out = a^T * b. Shapes: (k x n)^T * (k x m) -> (n x m).
Matrix matmul_at(const Matrix& a, const Matrix& b);

Vector matvec(const Matrix& a, std::span<const double> x);
Vector matvec_t(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

struct CholeskyFactor {
  Matrix lower;
  double log_det = 0.0;
};

/// Lower Cholesky factor of a symmetric positive definite matrix.
/// Throws NotPositiveDefinite on a non-positive pivot; no jitter is applied.
CholeskyFactor cholesky(const Matrix& m);

/// Solves L x = b for lower-triangular L.
Vector solve_lower(const Matrix& lower, std::span<const double> b);
/// Solves L^T x = b for lower-triangular L.
Vector solve_lower_t(const Matrix& lower, std::span<const double> b);

/// log sum_i exp(v_i), shifted by the maximum. Throws EmptyInput.
double log_sum_exp(std::span<const double> v);

/// In-place softmax; returns the log normaliser.
double softmax_inplace(std::span<double> v);

double digamma(double x);
double trigamma(double x);

struct SpectralEstimate {
  double sigma = 0.0;
  Vector u;
};

/// Largest singular value of w by power iteration from the left-singular
/// estimate u (length w.rows()). Each step: v = W^T u / |W^T u|,
/// u = W v / |W v|, sigma = u^T W v. Throws ZeroMatrix.
SpectralEstimate power_iteration_spectral_norm(const Matrix& w, Vector u, int steps);

}  // namespace ddu
