#include "tape.hpp"

#include "error.hpp"

namespace lookwhen {

const Tensor& Var::value() const {
  if (tape == nullptr) throw InvalidArgument("Var is not bound to a tape");
  return tape->value(*this);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value, std::string name) {
  Node n;
  n.op = std::move(name);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::param(const std::string& path, const Tensor& value) {
  if (auto it = param_ids_.find(path); it != param_ids_.end()) {
    return Var{this, it->second};
  }
  Node n;
  n.op = "param:" + path;
  n.value = value;
  n.requires_grad = true;
  n.param_path = path;
  Var v = push(std::move(n));
  param_ids_.emplace(path, v.id);
  return v;
}

Var Tape::detach(Var v) {
  Node n;
  n.op = "detach";
  n.value = value(v);
  n.inputs = {v.id};
  return push(std::move(n));
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, Backward backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape != this) throw InvalidArgument("op '" + n.op + "' mixes tapes");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (backward_done_) throw InvalidArgument("backward() called twice on one tape");
  backward_done_ = true;
  Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_str(root.value.shape()));
  }
  root.grad = Tensor::filled(root.value.shape(), 1.0);

  std::vector<Tensor*> grad_in;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.grad || !node.backward) continue;
    backward_order_.push_back(id);
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      Node& in = nodes_[node.inputs[i]];
      if (!in.requires_grad) continue;
      if (!in.grad) in.grad = Tensor(in.value.shape());
      grad_in[i] = &*in.grad;
    }
    node.backward(node.value, *node.grad, grad_in);
  }
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad ? &*n.grad : nullptr;
}

ParamStore Tape::param_grads() const {
  ParamStore out;
  for (const auto& [path, id] : param_ids_) {
    const Node& n = nodes_[id];
    out.emplace(path, n.grad ? *n.grad : Tensor(n.value.shape()));
  }
  return out;
}

std::optional<std::string> Tape::first_nonfinite_op() const {
  for (const Node& n : nodes_) {
    if (!n.value.all_finite()) return n.op;
  }
  return std::nullopt;
}

}  // namespace lookwhen
