#include "pbmrc/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace pbmrc {

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw std::invalid_argument("Tensor::from: size mismatch");
  Tensor t;
  t.rows_ = rows;
  t.cols_ = cols;
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::clone() const {
  Tensor t(rows_, cols_);
  if (data_) *t.data_ = *data_;
  return t;
}

void Tensor::fill(double v) {
  for (double& x : *data_) x = v;
}

bool Tensor::all_finite() const {
  if (!data_) return true;
  for (double x : *data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

bool Tensor::bitwise_equal(const Tensor& o) const {
  if (!same_shape(o)) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (ptr()[i] != o.ptr()[i]) return false;
    if (std::signbit(ptr()[i]) != std::signbit(o.ptr()[i])) return false;
  }
  return true;
}

double Tensor::sum_squares() const {
  double s = 0.0;
  for (std::size_t i = 0; i < size(); ++i) s += ptr()[i] * ptr()[i];
  return s;
}

Tensor t_matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner extents differ");
  Tensor c(a.rows(), b.cols(), 0.0);
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c.ptr() + i * r;
    const double* arow = a.ptr() + i * q;
    for (std::size_t k = 0; k < q; ++k) {
      const double av = arow[k];
      const double* brow = b.ptr() + k * r;
      for (std::size_t j = 0; j < r; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor t_matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner extents differ");
  Tensor c(a.rows(), b.rows(), 0.0);
  const std::size_t p = a.rows(), q = a.cols(), r = b.rows();
  for (std::size_t i = 0; i < p; ++i) {
    const double* arow = a.ptr() + i * q;
    for (std::size_t j = 0; j < r; ++j) {
      const double* brow = b.ptr() + j * q;
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += arow[k] * brow[k];
      c.at(i, j) = s;
    }
  }
  return c;
}

Tensor t_matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner extents differ");
  Tensor c(a.cols(), b.cols(), 0.0);
  const std::size_t q = a.rows(), p = a.cols(), r = b.cols();
  for (std::size_t k = 0; k < q; ++k) {
    const double* arow = a.ptr() + k * p;
    const double* brow = b.ptr() + k * r;
    for (std::size_t i = 0; i < p; ++i) {
      double* crow = c.ptr() + i * r;
      const double av = arow[i];
      for (std::size_t j = 0; j < r; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor t_add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  return c;
}

Tensor t_mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mul: shape mismatch");
  Tensor c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  return c;
}

Tensor t_scale(const Tensor& a, double c) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.ptr()[i] = a.ptr()[i] * c;
  return out;
}

Tensor t_transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

}  // namespace pbmrc
