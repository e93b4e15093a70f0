#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace lookwhen {

// Learnable tensors addressed by dotted path, e.g. "ext.blocks.0.attn.qkv.w".
// std::map keeps iteration order stable, which the optimizer and the
// checkpoint writer both rely on.
using ParamStore = std::map<std::string, Tensor>;

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning Tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Reverse-mode recording of primitive ops. Each node stores its forward value,
// its inputs and a closure that pushes the output gradient into the input
// gradients. Nodes are appended in execution order, so walking the node list
// backwards is a valid topological order.
class Tape {
 public:
  // grad_in[i] is null when input i does not need a gradient; otherwise the
  // closure accumulates into it. `out` is the op's own forward value.
  using Backward = std::function<void(const Tensor& out, const Tensor& grad_out,
                                      std::span<Tensor* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value, std::string name = "constant");

  // Leaf whose gradient is reported under `path`. Binding the same path twice
  // returns the same node.
  Var param(const std::string& path, const Tensor& value);

  // Copy of v's value that gradients do not flow through.
  Var detach(Var v);

  Var record(std::string op, Tensor value, std::vector<Var> inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 for a scalar loss and propagates to all
  // recorded nodes. May be called once per tape.
  void backward(Var loss);

  // Gradient of the last backward() with respect to v, or null if none
  // reached it.
  const Tensor* grad(Var v) const;

  // Gradients of every bound parameter, zero-filled for parameters that the
  // loss does not depend on.
  ParamStore param_grads() const;

  // Node ids in the order backward() visited them.
  const std::vector<std::size_t>& backward_order() const { return backward_order_; }

  // Name of the earliest op whose output is not finite, if any.
  std::optional<std::string> first_nonfinite_op() const;

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    std::optional<std::string> param_path;
    std::optional<Tensor> grad;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  std::vector<std::size_t> backward_order_;
  bool backward_done_ = false;
};

}  // namespace lookwhen
