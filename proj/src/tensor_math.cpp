#include "tensor_math.hpp"

namespace cvfc::detail {

void fill(Tensor& t, double value) {
  visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) v = static_cast<T>(value);
  });
}

void scale_inplace(Tensor& t, double factor) {
  visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) v = static_cast<T>(v * factor);
  });
}

void add_inplace(Tensor& t, const Tensor& delta) {
  require_same_shape(t, delta, "accumulate");
  const Tensor* src = &delta;
  Tensor converted;
  if (delta.dtype() != t.dtype()) {
    converted = delta.to(t.dtype());
    src = &converted;
  }
  visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dst = t.data<T>();
    auto s = src->data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s[i];
  });
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ArgumentError(std::string(op) + ": dtype mismatch " + to_string(a.dtype()) + " vs " + to_string(b.dtype()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace cvfc::detail
