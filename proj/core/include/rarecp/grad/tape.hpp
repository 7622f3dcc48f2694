#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "rarecp/grad/tensor.hpp"

namespace rarecp::grad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  // Gradient after Tape::backward; zeros if the node received no gradient.
  const Tensor& grad() const;
  bool requires_grad() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive applications in creation (hence topological) order and
// replays their vector-Jacobian products in reverse.
class Tape {
 public:
  // Receives the output gradient; accumulates into the inputs' gradients via grad_of().
  using Backward = std::function<void(const Tensor& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf node; participates in differentiation iff value.requires_grad().
  Var leaf(Tensor value);
  Var parameter(Tensor value);
  Var constant(Tensor value);

  // Used by primitives. The backward closure is dropped when no input requires grad.
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  // Seeds d(loss)/d(loss) = 1 and visits every recorded node once, in reverse.
  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  // Zeros (materialized on demand) for nodes that received no gradient.
  const Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient accumulator of node `id`, allocated on first use; nullptr if the
  // node does not require grad.
  Tensor* grad_of(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
    bool has_grad = false;
  };

  std::deque<Node> nodes_;
  std::size_t backward_visits_ = 0;
};

}  // namespace rarecp::grad
