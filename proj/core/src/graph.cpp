#include "skewprune/graph.hpp"

#include <utility>

#include "skewprune/errors.hpp"

namespace skewprune {

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }
const std::vector<int64_t>& Var::shape() const { return graph->value(*this).shape; }

Graph::ValueSlot& Graph::slot(Var v) {
  if (v.graph != this || v.id < 0 || static_cast<size_t>(v.id) >= slots_.size()) {
    throw IndexError("graph: var does not belong to this graph");
  }
  return slots_[static_cast<size_t>(v.id)];
}

const Graph::ValueSlot& Graph::slot(Var v) const {
  return const_cast<Graph*>(this)->slot(v);
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  ValueSlot s;
  s.value = std::move(value);
  s.requires_grad = requires_grad && grad_enabled_;
  slots_.push_back(std::move(s));
  return Var{this, static_cast<int32_t>(slots_.size() - 1)};
}

Var Graph::make_value(Tensor value, bool requires_grad) {
  return leaf(std::move(value), requires_grad);
}

const Tensor& Graph::value(Var v) const { return slot(v).value; }
Tensor& Graph::mutable_value(Var v) { return slot(v).value; }

const Tensor& Graph::grad(Var v) const {
  const ValueSlot& s = slot(v);
  if (!s.grad_touched) {
    throw StateError("graph: gradient not computed for this value; run backward() first");
  }
  return s.grad;
}

bool Graph::requires_grad(Var v) const { return slot(v).requires_grad; }

void Graph::record(std::function<void(Graph&)> backward_fn) {
  nodes_.push_back(std::move(backward_fn));
}

Tensor& Graph::grad_buffer(Var v) {
  ValueSlot& s = slot(v);
  if (!s.grad_touched) {
    s.grad = Tensor::zeros(s.value.shape);
    s.grad_touched = true;
  }
  return s.grad;
}

const Tensor* Graph::grad_if_touched(Var v) const {
  const ValueSlot& s = slot(v);
  return s.grad_touched ? &s.grad : nullptr;
}

void Graph::backward(Var root) {
  const Tensor& rv = value(root);
  if (rv.numel() != 1) {
    throw DimensionError("backward: root must be scalar, got " + rv.shape_str());
  }
  if (!slot(root).requires_grad) {
    throw StateError("backward: root does not require a gradient");
  }
  grad_buffer(root).data[0] = 1.0f;
  for (size_t i = nodes_.size(); i-- > 0;) {
    nodes_[i](*this);
  }
}

}  // namespace skewprune
