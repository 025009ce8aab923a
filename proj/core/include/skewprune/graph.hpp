#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "skewprune/tensor.hpp"

namespace skewprune {

class Graph;

/// Handle to a value living on a Graph tape. Cheap to copy; valid for the
/// lifetime of the owning graph.
struct Var {
  Graph* graph = nullptr;
  int32_t id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const std::vector<int64_t>& shape() const;
};

/// Reverse-mode autodiff tape. Operations append nodes during the forward
/// pass; backward() replays them in exact reverse construction order, so the
/// traversal is deterministic by construction. One graph per forward/backward
/// cycle; leaves hold copies of the parameter tensors.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Adds a leaf value. Gradients are accumulated for it only when
  /// requires_grad is set and gradients are enabled on this graph.
  Var leaf(Tensor value, bool requires_grad);

  const Tensor& value(Var v) const;
  Tensor& mutable_value(Var v);
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;

  /// Runs the backward sweep from a scalar root (numel()==1).
  void backward(Var root);

  /// When disabled, ops compute values but record no backward nodes and no
  /// result requires a gradient. Used for evaluation and activation capture.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  size_t node_count() const { return nodes_.size(); }
  size_t value_count() const { return slots_.size(); }

  // --- used by op implementations ---

  /// Creates a non-leaf result slot. requires_grad is forced off when
  /// gradients are disabled on the graph.
  Var make_value(Tensor value, bool requires_grad);

  /// Records a backward closure for a node whose output requires a gradient.
  /// Closures must reference slots by Var/id, never by pointer: the slot
  /// vector may reallocate as the tape grows.
  void record(std::function<void(Graph&)> backward_fn);

  /// Gradient buffer for a slot, zero-initialized on first touch.
  Tensor& grad_buffer(Var v);

  /// Gradient of v if backward has touched it, nullptr otherwise. Backward
  /// closures use this to skip nodes that never fed the loss.
  const Tensor* grad_if_touched(Var v) const;

 private:
  struct ValueSlot {
    Tensor value;
    Tensor grad;  // empty until touched during backward
    bool requires_grad = false;
    bool grad_touched = false;
  };

  ValueSlot& slot(Var v);
  const ValueSlot& slot(Var v) const;

  std::vector<ValueSlot> slots_;
  std::vector<std::function<void(Graph&)>> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace skewprune
