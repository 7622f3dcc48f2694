#include "rarecp/grad/tape.hpp"

#include "rarecp/error.hpp"

namespace rarecp::grad {

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value) {
  Node node;
  node.requires_grad = value.requires_grad();
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  value.set_requires_grad(true);
  return leaf(std::move(value));
}

Var Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Backward backward) {
  Node node;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw NumericError("primitive inputs belong to a different tape");
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  value.set_requires_grad(node.requires_grad);
  node.value = std::move(value);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_of(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape());
    node.has_grad = true;
  }
  return &node.grad;
}

const Tensor& Tape::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw NumericError("loss belongs to a different tape");
  if (nodes_[loss.id_].value.size() != 1) throw NumericError("backward() needs a scalar loss");
  Tensor* seed = grad_of(loss.id_);
  if (seed == nullptr) return;
  (*seed)[0] += 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.has_grad || !node.backward) continue;
    ++backward_visits_;
    node.backward(node.grad, *this);
  }
}

}  // namespace rarecp::grad
