#pragma once

#include <random>
#include <string>

#include "cvfc/ops.hpp"

namespace cvfc {

/// Uniform in [-sqrt(6/fan_in), sqrt(6/fan_in)].
Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng, DType dtype);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, Conv2dOptions opt, bool bias, std::mt19937_64& rng, DType dtype);

  Var forward(Graph& g, const Var& x) const;
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  Conv2dOptions opt_;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterStore& store, const std::string& name, std::size_t channels, DType dtype);

  Var forward(Graph& g, const Var& x, Mode mode) const;
  Parameter& gamma() const { return *gamma_; }
  Parameter& beta() const { return *beta_; }

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* running_mean_ = nullptr;
  Parameter* running_var_ = nullptr;
};

}  // namespace cvfc
