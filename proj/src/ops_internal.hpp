#pragma once

#include <string>

#include "cvfc/ops.hpp"
#include "tensor_math.hpp"

namespace cvfc::detail {

inline Graph& common_graph(const Var& a, const Var& b, const char* op) {
  if (&a.graph() != &b.graph()) throw ArgumentError(std::string(op) + ": inputs live on different graphs");
  return a.graph();
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

}  // namespace cvfc::detail
