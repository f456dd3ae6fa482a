#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpad/tensorcore/tensor.hpp"

namespace fpad {

class Graph;

// Handle to a value recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Tape of operations for reverse-mode differentiation. Nodes are appended in
// execution order, so ids are already a topological order; backward walks
// them once, from the loss down to the first node.
//
// Leaves created with `parameter` are bound to an external Tensor; backward
// adds their gradient into that tensor's grad buffer (it never zeroes it).
class Graph {
 public:
  // Receives the upstream gradient of the node's output.
  using BackwardFn = std::function<void(Graph&, std::span<const double> grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to `bound`; it takes part in differentiation iff
  // bound.requires_grad. `bound` must outlive every backward call.
  Var parameter(Tensor& bound);

  // Appends an op output. `fn` may be empty for non-differentiable results.
  // Throws NumericError if `value` holds NaN/Inf.
  Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  const char* op_name(Var v) const { return nodes_.at(v.id).op; }

  // Gradient buffer of a node during backward, zero-initialized on first use.
  std::span<double> grad_buffer(std::size_t id);
  // Gradient of a node after the last backward (empty if it received none).
  std::span<const double> grad_of(Var v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one value.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return visits_; }

  // Piecewise ops (activation signs, pooling winners, clamps) fold the branch
  // they took into a running hash, so two evaluations can be compared for
  // landing in the same smooth piece.
  void note_branch(std::uint64_t bits);
  std::uint64_t branch_signature() const { return branch_signature_; }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* bound = nullptr;
    bool needs_grad = false;
  };

  Var push(Node node);
  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
  std::uint64_t branch_signature_ = 0;
};

}  // namespace fpad
