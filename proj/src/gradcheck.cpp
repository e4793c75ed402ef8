#include "cvfc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cvfc/ops.hpp"

namespace cvfc {

namespace {

std::vector<std::size_t> pick_indices(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (n <= limit) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Scalar objective: the output itself, or <output, weights> for tensors.
Var contract(const Var& out, const Tensor& weights) {
  if (out.value().numel() == 1) return reshape(out, {1});
  Graph& g = out.graph();
  return sum(mul(out, g.constant(weights)));
}

Tensor random_weights(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  Tensor w(shape, DType::f64);
  for (auto& v : w.data<double>()) v = std::bernoulli_distribution(0.5)(rng) ? dist(rng) : -dist(rng);
  return w;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(std::string op, std::vector<Tensor> inputs, const GradCheckFn& fn,
                           const GradCheckOptions& opts, std::vector<bool> wrt) {
  GradCheckReport report;
  report.op = std::move(op);
  if (wrt.empty()) wrt.assign(inputs.size(), true);
  if (wrt.size() != inputs.size()) throw ArgumentError("grad_check: wrt flags do not match inputs");
  for (const auto& t : inputs) {
    if (t.dtype() != DType::f64) throw ArgumentError("grad_check: inputs must be f64");
  }

  std::mt19937_64 rng(opts.seed);
  Tensor weights;
  auto evaluate = [&](bool with_backward, std::vector<Tensor>* grads) -> double {
    Graph g;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(g.input(inputs[i], wrt[i]));
    Var out = fn(g, leaves);
    if (weights.empty()) weights = random_weights(out.value().shape(), rng);
    Var loss = contract(out, weights);
    if (with_backward) {
      g.backward(loss);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor& gr = leaves[i].grad();
        (*grads)[i] = gr.empty() ? Tensor::zeros(inputs[i].shape(), DType::f64) : gr;
      }
    }
    return loss.value().item();
  };

  try {
    std::vector<Tensor> analytic(inputs.size());
    evaluate(true, &analytic);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!wrt[i]) continue;
      for (std::size_t k : pick_indices(inputs[i].numel(), opts.max_probes_per_input, rng)) {
        const double orig = inputs[i].at(k);
        inputs[i].set(k, orig + opts.step);
        const double up = evaluate(false, nullptr);
        inputs[i].set(k, orig - opts.step);
        const double down = evaluate(false, nullptr);
        inputs[i].set(k, orig);
        const double numeric = (up - down) / (2.0 * opts.step);
        report.max_rel_err = std::max(report.max_rel_err, relative_error(analytic[i].at(k), numeric));
        ++report.probes;
      }
    }
    report.passed = report.max_rel_err <= opts.tolerance;
  } catch (const Error& e) {
    report.passed = false;
    report.failure = e.what();
  }
  return report;
}

GradCheckReport grad_check_parameters(std::string name, std::span<Parameter* const> params,
                                      const std::function<Var(Graph&)>& fn, std::size_t samples,
                                      const GradCheckOptions& opts) {
  GradCheckReport report;
  report.op = std::move(name);
  std::vector<Parameter*> trainable;
  for (auto* p : params) {
    if (p->trainable) {
      if (p->value.dtype() != DType::f64) throw ArgumentError("grad_check_parameters: parameters must be f64");
      trainable.push_back(p);
    }
  }
  if (trainable.empty()) throw ArgumentError("grad_check_parameters: no trainable parameters");

  auto evaluate = [&](bool with_backward) -> double {
    Graph g;
    Var loss = fn(g);
    if (loss.value().numel() != 1) throw DimensionError("grad_check_parameters: objective must be scalar");
    if (with_backward) g.backward(loss);
    return loss.value().item();
  };

  try {
    for (auto* p : trainable) p->zero_grad();
    evaluate(true);

    // Draw (parameter, element) probes uniformly over all trainable scalars.
    std::vector<std::size_t> offsets{0};
    for (auto* p : trainable) offsets.push_back(offsets.back() + p->value.numel());
    std::mt19937_64 rng(opts.seed);
    for (std::size_t flat : pick_indices(offsets.back(), samples, rng)) {
      const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat);
      const std::size_t which = static_cast<std::size_t>(it - offsets.begin()) - 1;
      Parameter& p = *trainable[which];
      const std::size_t k = flat - offsets[which];
      const double analytic = p.grad.at(k);
      const double orig = p.value.at(k);
      p.value.set(k, orig + opts.step);
      const double up = evaluate(false);
      p.value.set(k, orig - opts.step);
      const double down = evaluate(false);
      p.value.set(k, orig);
      const double numeric = (up - down) / (2.0 * opts.step);
      report.max_rel_err = std::max(report.max_rel_err, relative_error(analytic, numeric));
      ++report.probes;
    }
    report.passed = report.max_rel_err <= opts.tolerance;
  } catch (const Error& e) {
    report.passed = false;
    report.failure = e.what();
  }
  return report;
}

}  // namespace cvfc
