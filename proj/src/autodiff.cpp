#include "cvfc/autodiff.hpp"

#include "tensor_math.hpp"

namespace cvfc {

namespace {
thread_local std::string g_backward_fault;
}

namespace testing {
void set_backward_fault(std::string op) { g_backward_fault = std::move(op); }
const std::string& backward_fault() { return g_backward_fault; }
}  // namespace testing

void Parameter::zero_grad() {
  if (grad.empty() || grad.shape() != value.shape() || grad.dtype() != value.dtype()) {
    grad = Tensor::zeros(value.shape(), value.dtype());
  } else {
    detail::fill(grad, 0.0);
  }
}

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  auto& p = items_.emplace_back();
  p.name = std::move(name);
  p.value = std::move(value);
  p.trainable = trainable;
  return p;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : items_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : items_) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

std::vector<Parameter*> ParameterStore::buffers() {
  std::vector<Parameter*> out;
  for (auto& p : items_) {
    if (!p.trainable) out.push_back(&p);
  }
  return out;
}

Graph& Var::graph() const {
  if (!graph_) throw ArgumentError("use of an unbound Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }
const Tensor& Var::grad() const { return graph().grad(id_); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::parameter(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  Var v = push(std::move(n));
  bound_.emplace(&p, v.id());
  return v;
}

Var Graph::record(std::string_view op, Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + std::string(op) + "'");
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (auto id : inputs) {
    if (id >= nodes_.size()) throw ArgumentError("op '" + n.op + "' references an unknown node");
    n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  }
  n.inputs = std::move(inputs);
  if (n.requires_grad) {
    if (!g_backward_fault.empty() && g_backward_fault == n.op) {
      n.backward = [inner = std::move(backward)](Graph& g, const Tensor& gout) {
        Tensor skewed = gout;
        detail::scale_inplace(skewed, 1.5);
        inner(g, skewed);
      };
    } else {
      n.backward = std::move(backward);
    }
  }
  return push(std::move(n));
}

void Graph::accumulate(NodeId id, const Tensor& delta) {
  auto& node = nodes_.at(id);
  if (!node.requires_grad) return;
  if (delta.shape() != node.value.shape()) {
    throw DimensionError("gradient shape " + shape_string(delta.shape()) + " does not match node '" + node.op +
                         "' shape " + shape_string(node.value.shape()));
  }
  if (node.grad.empty()) {
    node.grad = delta.dtype() == node.value.dtype() ? delta : delta.to(node.value.dtype());
  } else {
    detail::add_inplace(node.grad, delta);
  }
}

void Graph::backward(const Var& root) {
  if (&root.graph() != this) throw ArgumentError("backward root belongs to another graph");
  if (backward_done_) throw ArgumentError("backward already ran on this graph");
  const auto& rv = nodes_.at(root.id()).value;
  if (rv.numel() != 1) throw DimensionError("backward root must be a scalar, got " + shape_string(rv.shape()));
  backward_done_ = true;
  if (!nodes_[root.id()].requires_grad) return;
  accumulate(root.id(), Tensor::full(rv.shape(), 1.0, rv.dtype()));

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param) {
      auto& p = *node.param;
      if (p.grad.empty() || p.grad.shape() != p.value.shape() || p.grad.dtype() != p.value.dtype()) {
        p.zero_grad();
      }
      detail::add_inplace(p.grad, node.grad);
    }
  }
}

}  // namespace cvfc
