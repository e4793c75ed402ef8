#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cvfc/tensor.hpp"

namespace cvfc {

/// A named trainable array (or a non-trainable buffer such as batchnorm
/// running statistics). Gradients accumulate into `grad` on every
/// Graph::backward that touched the parameter.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad();
};

/// Owns parameters at stable addresses, in registration order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  Parameter& add(std::string name, Tensor value, bool trainable = true);

  std::vector<Parameter*> all();
  std::vector<Parameter*> trainable();
  std::vector<Parameter*> buffers();
  std::size_t size() const { return items_.size(); }

 private:
  std::deque<Parameter> items_;
};

using NodeId = std::size_t;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid as long as the graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const;
  NodeId id() const { return id_; }
  const Tensor& value() const;
  /// Accumulated gradient after backward(); empty if none reached this node.
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  DType dtype() const { return value().dtype(); }

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = 0;
};

/// Receives the gradient of the node's output and accumulates gradients into
/// the node's inputs through Graph::accumulate.
using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

/// Reverse-mode tape. Nodes are appended after their inputs, so the node
/// order is already topological; backward walks it once in reverse.
///
/// A graph is confined to one thread. With `check_finite` every recorded op
/// output is scanned and a NaN/Inf raises NumericError naming the op.
class Graph {
 public:
  explicit Graph(bool check_finite = true) : check_finite_(check_finite) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  /// Leaf bound to `p`; binding the same parameter twice returns the same node.
  Var parameter(Parameter& p);

  /// Records an op output. `backward` is dropped when no input needs a gradient.
  Var record(std::string_view op, Tensor value, std::vector<NodeId> inputs, BackwardFn backward);

  /// Adds `delta` into the gradient of node `id` (no-op for constants).
  void accumulate(NodeId id, const Tensor& delta);

  /// Seeds d(root)/d(root) = 1 and propagates; bound parameters receive
  /// their gradients additively.
  void backward(const Var& root);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor& grad(NodeId id) const { return nodes_.at(id).grad; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  const std::string& op_name(NodeId id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // references from Var::value() must survive later pushes
  std::unordered_map<Parameter*, NodeId> bound_;
  bool check_finite_;
  bool backward_done_ = false;
};

namespace testing {
/// Corrupts the backward pass of every op named `op` recorded afterwards on
/// this thread (gradient scaled by 1.5). Empty string clears. Used to prove
/// that the gradient checker catches wrong derivatives.
void set_backward_fault(std::string op);
const std::string& backward_fault();
}  // namespace testing

}  // namespace cvfc
