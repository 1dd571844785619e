#pragma once
// Reverse-mode automatic differentiation over whole tensors.
//
// A Graph is a tape of nodes created in evaluation order. Each node owns its
// value, an optional gradient of the final scalar loss with respect to that
// value, and a pull closure that scatters the node's gradient into its
// parents. backward() seeds the loss gradient with 1 and walks the tape in
// reverse creation order, which is a valid topological order by construction.
//
// Gradient packing convention for complex tensors: the gradient buffer holds
// (dL/d Re z, dL/d Im z) pairs in the same interleaved layout as the value.
// For a complex-linear map y = L x this makes the pullback the Hermitian
// adjoint: gx = L^H gy, which is what every op below implements.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dfmr/errors.hpp"
#include "dfmr/tensor.hpp"

namespace dfmr {

// A trainable value living outside any graph. Gradients accumulate into
// `grad` across backward() calls until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.dtype, value.shape) {}

  void zero_grad() { grad.fill(0.0); }
};

class Graph;

struct Var {
  Graph* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

class Graph {
 public:
  // pull(graph, self_id) scatters node self_id's gradient into its parents.
  using Pull = std::function<void(Graph&, int)>;

  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    bool requires_grad = false;
    Pull pull;  // empty for leaves and constants
    Parameter* param = nullptr;
  };

  Var constant(Tensor value) {
    return push(std::move(value), false, nullptr, nullptr);
  }

  // Leaf bound to a parameter; the value is copied onto the tape so the
  // parameter may be updated while the graph is still alive.
  Var leaf(Parameter& p) {
    return push(p.value, true, nullptr, &p);
  }

  Var make(Tensor value, bool requires_grad, Pull pull) {
    return push(std::move(value), requires_grad, std::move(pull), nullptr);
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  Tensor& value(Var v) { return nodes_[static_cast<size_t>(v.id)].value; }
  Tensor& grad(Var v) { return nodes_[static_cast<size_t>(v.id)].grad; }

  // Gradient buffer of node `id`, allocated and zeroed on first touch.
  Tensor& grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad.same_layout(n.value)) n.grad = Tensor(n.value.dtype, n.value.shape);
    return n.grad;
  }

  double scalar(Var v) {
    const Tensor& t = value(v);
    if (t.numel() != 1 || t.is_complex())
      throw NumericError("graph: expected real scalar node");
    return t.data[0];
  }

  // Reverse sweep from `loss`, which must be a real scalar. Leaf gradients
  // are accumulated into their bound parameters.
  void backward(Var loss) {
    if (!loss.valid() || loss.g != this)
      throw NumericError("backward: loss from another graph");
    const Tensor& lt = value(loss);
    if (lt.numel() != 1 || lt.is_complex())
      throw NumericError("backward: loss must be a real scalar");
    grad_buffer(loss.id).data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      if (n.pull) n.pull(*this, i);
      if (n.param != nullptr) {
        Tensor& pg = n.param->grad;
        for (size_t k = 0; k < pg.data.size(); ++k) pg.data[k] += n.grad.data[k];
      }
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  Var push(Tensor value, bool requires_grad, Pull pull, Parameter* param) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.pull = std::move(pull);
    n.param = param;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

// Accumulates src into the gradient buffer of node `id` if it tracks grads.
inline void accumulate_grad(Graph& g, int id, const Tensor& src) {
  if (!g.node(id).requires_grad) return;
  Tensor& dst = g.grad_buffer(id);
  for (size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += src.data[k];
}

}  // namespace dfmr
