#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace goatlab {

// Dense row-major matrix of doubles, the universal numeric carrier.
// Entries are finite by construction: every constructor and every operation
// that builds a new matrix validates against NaN/Inf and throws
// numeric_error otherwise.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> entries);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double factor);

  // Throws numeric_error naming `context` if any entry is NaN/Inf.
  void ensure_finite(const char* context) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double factor, Matrix a);
Matrix operator*(Matrix a, double factor);

// Standard product; throws shape_error naming both shapes on a mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// y = a·x for a column vector x of length a.cols().
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

// u·v^T as a rows(u)×rows(v) matrix.
Matrix outer(std::span<const double> u, std::span<const double> v);

// Columns [start, start+count) of `a` as a new matrix.
Matrix columns(const Matrix& a, std::size_t start, std::size_t count);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);

double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> u);

}  // namespace goatlab
