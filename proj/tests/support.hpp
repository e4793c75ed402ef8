#pragma once

// Shared helpers for the unit tests: seeded generators and scratch dirs.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cvfc/image_io.hpp"
#include "cvfc/tensor.hpp"

namespace cvfc::test {

/// Hand-rolled value generator for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(rng_); }

  Tensor tensor(const Shape& shape, double lo = -2.0, double hi = 2.0, DType dtype = DType::f64) {
    Tensor t(shape, dtype);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, uniform(lo, hi));
    return t;
  }
  Tensor binary(const Shape& shape, DType dtype = DType::f64) {
    Tensor t(shape, dtype);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, coin() ? 1.0 : 0.0);
    return t;
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cvfc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Prediction/ground-truth pair where class c+1 covers `union_size` ground-truth
/// pixels and the prediction marks the first `hits[c]` of them, leaving the rest
/// background. IoU of class c+1 is then hits[c] / union_size.
struct MaskPair {
  LabelMap pred;
  LabelMap gt;
};

inline MaskPair crafted_pair(const std::vector<std::size_t>& hits, std::size_t union_size) {
  const std::size_t n = hits.size() * union_size;
  MaskPair m{{1, n, std::vector<std::uint8_t>(n, 0), "pair"}, {1, n, std::vector<std::uint8_t>(n, 0), "pair"}};
  for (std::size_t c = 0; c < hits.size(); ++c) {
    for (std::size_t i = 0; i < union_size; ++i) {
      m.gt.labels[c * union_size + i] = static_cast<std::uint8_t>(c + 1);
      if (i < hits[c]) m.pred.labels[c * union_size + i] = static_cast<std::uint8_t>(c + 1);
    }
  }
  return m;
}

}  // namespace cvfc::test
