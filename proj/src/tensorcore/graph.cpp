#include "fpad/tensorcore/graph.hpp"

#include <algorithm>

#include "fpad/common/rng.hpp"
#include "fpad/errors.hpp"

namespace fpad {

const Tensor& Var::value() const {
  if (!graph) throw UsageError("unbound Var");
  return graph->value(*this);
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

void Graph::check_owned(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw UsageError("Var does not belong to this graph");
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::parameter(Tensor& bound) {
  Node n;
  n.op = "parameter";
  n.value = bound;
  n.value.requires_grad = false;
  n.value.clear_grad();
  n.bound = &bound;
  n.needs_grad = bound.requires_grad;
  return push(std::move(n));
}

Var Graph::record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from op '") + op + "'");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in);
    n.inputs.push_back(in.id);
    n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
  }
  if (!fn) n.needs_grad = false;
  if (n.needs_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Graph::note_branch(std::uint64_t bits) { branch_signature_ = mix_seed(branch_signature_ ^ bits); }

const Tensor& Graph::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

bool Graph::needs_grad(Var v) const {
  check_owned(v);
  return nodes_[v.id].needs_grad;
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Graph::grad_of(Var v) const {
  check_owned(v);
  return nodes_[v.id].grad;
}

void Graph::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id].value.size() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  visits_ = 0;
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss.id)[0] = 1.0;

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    ++visits_;
    if (n.bound) {
      auto g = n.bound->grad();
      std::transform(g.begin(), g.end(), n.grad.begin(), g.begin(), std::plus<>());
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

}  // namespace fpad
