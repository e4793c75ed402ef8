#include "cvfc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace cvfc {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
  }
  const auto n = shape_numel(shape_);
  if (dtype_ == DType::f32) {
    data_ = std::vector<float>(n, 0.0f);
  } else {
    data_ = std::vector<double>(n, 0.0);
  }
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : t.data<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (values.size() != t.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_string(t.shape()));
  }
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape_); }

double Tensor::at(std::size_t flat) const {
  return visit_dtype(dtype_, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(data<T>()[flat]);
  });
}

void Tensor::set(std::size_t flat, double value) {
  visit_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    data<T>()[flat] = static_cast<T>(value);
  });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs a one-element tensor, got " + shape_string(shape_));
  return at(0);
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_ || empty()) {
    Tensor copy = *this;
    copy.dtype_ = empty() ? dtype : dtype_;
    return copy;
  }
  Tensor out(shape_, dtype);
  visit_dtype(dtype_, [&](auto src_tag) {
    using S = decltype(src_tag);
    visit_dtype(dtype, [&](auto dst_tag) {
      using D = decltype(dst_tag);
      auto src = data<S>();
      auto dst = out.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive");
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(i);
  return out;
}

bool Tensor::all_finite() const {
  return visit_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    for (T v : data<T>()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  });
}

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  if (empty()) return true;
  return visit_dtype(dtype_, [&](auto tag) {
    using T = decltype(tag);
    auto a = data<T>();
    auto b = other.data<T>();
    return std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
  });
}

}  // namespace cvfc
