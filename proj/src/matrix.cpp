#include "dlrgrid/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "dlrgrid/errors.hpp"
#include "dlrgrid/kernels.hpp"

namespace dlrgrid {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeMismatch("matrix data has " + std::to_string(data_.size()) +
                        " values, expected " + std::to_string(rows_ * cols_));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeMismatch("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

double CsrMatrix::at(std::size_t r, std::size_t c) const {
  const auto begin = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r]);
  const auto end = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[r + 1]);
  const auto it = std::lower_bound(begin, end, c);
  if (it == end || *it != c) return 0.0;
  return values[static_cast<std::size_t>(it - col_idx.begin())];
}

Matrix CsrMatrix::to_dense() const {
  Matrix d(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) d(r, col_idx[p]) = values[p];
  }
  return d;
}

CsrMatrix CsrMatrix::identity(std::size_t n) {
  CsrMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.resize(n + 1);
  m.col_idx.resize(n);
  m.values.assign(n, 1.0);
  for (std::size_t i = 0; i <= n; ++i) m.row_ptr[i] = i;
  for (std::size_t i = 0; i < n; ++i) m.col_idx[i] = i;
  return m;
}

CsrMatrix CsrMatrix::from_dense(const Matrix& dense) {
  CsrMatrix m;
  m.rows = dense.rows();
  m.cols = dense.cols();
  m.row_ptr.push_back(0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (dense(r, c) != 0.0) {
        m.col_idx.push_back(c);
        m.values.push_back(dense(r, c));
      }
    }
    m.row_ptr.push_back(m.values.size());
  }
  return m;
}

namespace {
[[noreturn]] void mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeMismatch(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                      b.shape_string());
}
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) mismatch("matmul", a, b);
  Matrix c(a.rows(), b.cols());
  kernels::active().gemm_nn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data(), false);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) mismatch("matmul_tn", a, b);
  Matrix c(a.cols(), b.cols());
  kernels::active().gemm_tn(a.rows(), b.cols(), a.cols(), a.data(), b.data(), c.data(), false);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) mismatch("matmul_nt", a, b);
  Matrix c(a.rows(), b.rows());
  kernels::active().gemm_nt(a.rows(), a.cols(), b.rows(), a.data(), b.data(), c.data(), false);
  return c;
}

Matrix spmm(const CsrMatrix& s, const Matrix& x) {
  if (s.cols != x.rows()) {
    throw ShapeMismatch("spmm: sparse (" + std::to_string(s.rows) + "x" + std::to_string(s.cols) +
                        ") times " + x.shape_string());
  }
  Matrix y(s.rows, x.cols());
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
      k.axpy(x.cols(), s.values[p], x.row(s.col_idx[p]).data(), y.row(r).data());
    }
  }
  return y;
}

Matrix spmm_tn(const CsrMatrix& s, const Matrix& x) {
  if (s.rows != x.rows()) {
    throw ShapeMismatch("spmm_tn: sparse (" + std::to_string(s.rows) + "x" +
                        std::to_string(s.cols) + ")^T times " + x.shape_string());
  }
  Matrix y(s.cols, x.cols());
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t p = s.row_ptr[r]; p < s.row_ptr[r + 1]; ++p) {
      k.axpy(x.cols(), s.values[p], x.row(r).data(), y.row(s.col_idx[p]).data());
    }
  }
  return y;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) mismatch("max_abs_diff", a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.flat()[i] - b.flat()[i]));
  return m;
}

}  // namespace dlrgrid
