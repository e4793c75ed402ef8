#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cvfc/errors.hpp"

namespace cvfc {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

std::string to_string(DType dtype);
std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Calls `fn` with a value of the scalar type matching `dtype`
/// (float{} or double{}), so kernels can be written once as generic lambdas.
template <class Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::f64) return fn(double{});
  return fn(float{});
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Dense row-major n-dimensional array of f32 or f64 scalars.
///
/// Value semantic: copies are deep. Every extent is positive and the buffer
/// length always equals the product of the extents. A default-constructed
/// tensor is "empty" (no shape, no data) and is used as an absent gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::f32);

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from(Shape shape, std::span<const double> values, DType dtype = DType::f32);
  static Tensor from(Shape shape, std::initializer_list<double> values, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool empty() const { return shape_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const { return dtype_; }

  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> data() const;

  double at(std::size_t flat) const;
  void set(std::size_t flat, double value);
  /// Value of a one-element tensor.
  double item() const;

  Tensor to(DType dtype) const;
  Tensor reshaped(Shape shape) const;
  std::vector<double> to_vector() const;
  bool all_finite() const;

  /// Bitwise equality of shape, dtype, and buffer.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  DType dtype_ = DType::f32;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

template <class T>
std::span<T> Tensor::data() {
  if (dtype_ != dtype_of<T>()) throw ArgumentError("tensor dtype is " + to_string(dtype_));
  return std::get<std::vector<T>>(data_);
}

template <class T>
std::span<const T> Tensor::data() const {
  if (dtype_ != dtype_of<T>()) throw ArgumentError("tensor dtype is " + to_string(dtype_));
  return std::get<std::vector<T>>(data_);
}

}  // namespace cvfc
