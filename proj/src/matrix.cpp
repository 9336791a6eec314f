#include "goatlab/matrix.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "goatlab/errors.hpp"

namespace goatlab {

namespace {

std::string shape_of(const Matrix& a) {
  std::ostringstream out;
  out << a.rows() << "x" << a.cols();
  return out.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw shape_error(std::string(op) + ": shapes " + shape_of(a) + " and " + shape_of(b) +
                      " do not match");
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw shape_error("Matrix: data length " + std::to_string(data_.size()) +
                      " does not equal " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  ensure_finite("Matrix construction");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& row : rows) {
    if (row.size() != cols_) {
      throw shape_error("Matrix: ragged initializer rows");
    }
    data_.insert(data_.end(), row.begin(), row.end());
  }
  ensure_finite("Matrix construction");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> entries) {
  Matrix m(entries.size(), entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) m(i, i) = entries[i];
  m.ensure_finite("Matrix::diagonal");
  return m;
}

void Matrix::ensure_finite(const char* context) const {
  for (double v : data_) {
    if (!std::isfinite(v)) {
      throw numeric_error(std::string(context) + ": non-finite entry");
    }
  }
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "operator+");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  ensure_finite("operator+");
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "operator-");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  ensure_finite("operator-");
  return *this;
}

Matrix& Matrix::operator*=(double factor) {
  for (double& v : data_) v *= factor;
  ensure_finite("operator*");
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double factor, Matrix a) { return a *= factor; }
Matrix operator*(Matrix a, double factor) { return a *= factor; }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw shape_error("matmul: inner dimensions of " + shape_of(a) + " and " + shape_of(b) +
                      " do not agree");
  }
  Matrix out(a.rows(), b.cols());
  // i-k-j loop order keeps both streams row-major.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) {
        out(i, j) += aik * b(k, j);
      }
    }
  }
  out.ensure_finite("matmul");
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      out(j, i) = a(i, j);
    }
  }
  return out;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) {
    throw shape_error("matvec: matrix " + shape_of(a) + " against vector of length " +
                      std::to_string(x.size()));
  }
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    y[i] = dot(a.row(i), x);
  }
  return y;
}

Matrix outer(std::span<const double> u, std::span<const double> v) {
  Matrix out(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) {
      out(i, j) = u[i] * v[j];
    }
  }
  out.ensure_finite("outer");
  return out;
}

Matrix columns(const Matrix& a, std::size_t start, std::size_t count) {
  if (start + count > a.cols()) {
    throw shape_error("columns: range [" + std::to_string(start) + ", " +
                      std::to_string(start + count) + ") exceeds " + shape_of(a));
  }
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) {
      out(i, j) = a(i, start + j);
    }
  }
  return out;
}

double frobenius_norm(const Matrix& a) { return norm(a.data()); }

double max_abs(const Matrix& a) {
  double best = 0.0;
  for (double v : a.data()) best = std::max(best, std::abs(v));
  return best;
}

double dot(std::span<const double> u, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

}  // namespace goatlab
