#include "cvfc/layers.hpp"

#include <cmath>

namespace cvfc {

Tensor he_uniform(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng, DType dtype) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape, dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, Conv2dOptions opt, bool bias, std::mt19937_64& rng, DType dtype)
    : opt_(opt) {
  weight_ = &store.add(name + ".weight",
                       he_uniform({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng, dtype));
  if (bias) bias_ = &store.add(name + ".bias", Tensor::zeros({out_channels}, dtype));
}

Var Conv2d::forward(Graph& g, const Var& x) const {
  std::optional<Var> b;
  if (bias_) b = g.parameter(*bias_);
  return conv2d(x, g.parameter(*weight_), b, opt_);
}

BatchNorm2d::BatchNorm2d(ParameterStore& store, const std::string& name, std::size_t channels, DType dtype) {
  gamma_ = &store.add(name + ".gamma", Tensor::full({channels}, 1.0, dtype));
  beta_ = &store.add(name + ".beta", Tensor::zeros({channels}, dtype));
  running_mean_ = &store.add(name + ".running_mean", Tensor::zeros({channels}, dtype), false);
  running_var_ = &store.add(name + ".running_var", Tensor::full({channels}, 1.0, dtype), false);
}

Var BatchNorm2d::forward(Graph& g, const Var& x, Mode mode) const {
  return batchnorm2d(x, g.parameter(*gamma_), g.parameter(*beta_), running_mean_->value, running_var_->value, mode);
}

}  // namespace cvfc
