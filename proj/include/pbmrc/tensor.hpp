#pragma once

#include <cstddef>
#include <memory>
#include <vector>

namespace pbmrc {

// Dense row-major 2D array of 64-bit floats. Vectors are 1xN or Nx1.
// The buffer is shared; clone() gives an independent copy. Tensors that
// participate in an autodiff graph must not be mutated while the graph is
// alive (parameter updates happen between steps).
class Tensor {
 public:
  Tensor() : rows_(0), cols_(0) {}
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows),
        cols_(cols),
        data_(std::make_shared<std::vector<double>>(rows * cols, fill)) {}

  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& at(std::size_t r, std::size_t c) { return (*data_)[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols_ + c]; }
  double* ptr() { return data_->data(); }
  const double* ptr() const { return data_->data(); }

  Tensor clone() const;
  void fill(double v);
  bool all_finite() const;
  bool bitwise_equal(const Tensor& o) const;

  // Sum of squares of all elements, fixed left-to-right order.
  double sum_squares() const;

 private:
  std::size_t rows_, cols_;
  std::shared_ptr<std::vector<double>> data_;
};

// Plain (non-graph) kernels, shared by forward ops and backward rules.
// All reductions run in fixed ascending-index order.
Tensor t_matmul(const Tensor& a, const Tensor& b);       // a[pxq] * b[qxr]
Tensor t_matmul_nt(const Tensor& a, const Tensor& b);    // a[pxq] * b[rxq]^T
Tensor t_matmul_tn(const Tensor& a, const Tensor& b);    // a[qxp]^T * b[qxr]
Tensor t_add(const Tensor& a, const Tensor& b);
Tensor t_mul(const Tensor& a, const Tensor& b);
Tensor t_scale(const Tensor& a, double c);
Tensor t_transpose(const Tensor& a);

}  // namespace pbmrc
