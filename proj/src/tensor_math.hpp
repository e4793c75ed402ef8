#pragma once

// Internal dense kernels shared by the op implementations.

#include <Eigen/Core>

#include "cvfc/tensor.hpp"

namespace cvfc::detail {

void fill(Tensor& t, double value);
void scale_inplace(Tensor& t, double factor);
/// t += delta (delta converted when dtypes differ).
void add_inplace(Tensor& t, const Tensor& delta);

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

/// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major. op(A) is M x K
/// (A stored K x M when trans_a), op(B) is K x N (B stored N x K when trans_b).
template <class T>
void gemm(bool trans_a, bool trans_b, Eigen::Index m, Eigen::Index n, Eigen::Index k, const T* a, const T* b,
          T* c, bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> ma(a, trans_a ? k : m, trans_a ? m : k);
  Eigen::Map<const Mat> mb(b, trans_b ? n : k, trans_b ? k : n);
  Eigen::Map<Mat> mc(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate) {
      mc.noalias() += lhs * rhs;
    } else {
      mc.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(ma, mb);
  } else if (trans_a && !trans_b) {
    run(ma.transpose(), mb);
  } else if (!trans_a && trans_b) {
    run(ma, mb.transpose());
  } else {
    run(ma.transpose(), mb.transpose());
  }
}

}  // namespace cvfc::detail
