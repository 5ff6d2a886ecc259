#pragma once

// Tape-based reverse-mode differentiation.
//
// Every differentiable op appends one node to a Tape. A node owns its forward
// value, a lazily allocated gradient buffer, and a closure that pushes the
// node's gradient into its parents. Nodes are appended in evaluation order, so
// the tape itself is a topological order and backward() is a single reverse
// sweep.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bcd/tensor.hpp"

namespace bcd {

/// A named, trainable tensor with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class T>
class Tape {
 public:
  using value_type = T;
  using Backward = std::function<void(Tape&, const Tensor<T>& grad)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// When disabled, ops record values only; used for inference.
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf that differentiates into an external tensor (used by finite-difference checks).
  Var<T> variable(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, grad_enabled_});
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Leaf bound to a Parameter; backward() accumulates into param.grad.
  /// Repeated calls with the same Parameter return the same leaf.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_leaves_.find(&p); it != param_leaves_.end()) return Var<T>(this, it->second);
    nodes_.push_back(Node{p.value, {}, {}, grad_enabled_ ? &p : nullptr, grad_enabled_});
    param_leaves_.emplace(&p, nodes_.size() - 1);
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Appends an op result. `backward` is dropped when no parent needs a gradient.
  Var<T> record(Tensor<T> value, bool any_parent_requires_grad, Backward backward) {
    const bool rg = grad_enabled_ && any_parent_requires_grad;
    nodes_.push_back(Node{std::move(value), {}, rg ? std::move(backward) : Backward{}, nullptr, rg});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of `id`, allocating zeros on first use. Ops that scatter
  /// into a parent write through this.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& nd = nodes_[id];
    if (nd.grad.shape() != nd.value.shape()) nd.grad = Tensor<T>(nd.value.shape());
    return nd.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Reverse sweep from a scalar root. Parameter leaves accumulate into
  /// their Parameter::grad; variable leaves keep their gradient on the tape.
  void backward(const Var<T>& root) {
    if (root.shape().size() != 1)
      throw ShapeError("backward: root must be scalar, got shape " + to_string(root.shape()));
    if (!grad_enabled_) throw std::logic_error("backward: gradients disabled on this tape");
    Node& r = nodes_[root.id()];
    if (!r.requires_grad) return;
    r.grad = Tensor<T>(r.value.shape(), T(1));
    for (std::size_t k = root.id() + 1; k-- > 0;) {
      Node& nd = nodes_[k];
      if (!nd.requires_grad || nd.grad.shape() != nd.value.shape()) continue;
      if (nd.param) {
        if (nd.param->grad.shape() != nd.value.shape()) nd.param->zero_grad();
        nd.param->grad += nd.grad;
      }
      if (nd.backward) {
        // Interior gradients are released once propagated; only leaves keep theirs.
        Tensor<T> g = std::move(nd.grad);
        nd.grad = Tensor<T>{};
        nd.backward(*this, g);
      }
    }
  }

  /// Gradient accumulated at leaf `v` by the last backward(); zeros if none reached it.
  Tensor<T> grad_of(const Var<T>& v) const {
    const Node& nd = nodes_.at(v.id());
    if (nd.grad.shape() != nd.value.shape()) return Tensor<T>(nd.value.shape());
    return nd.grad;
  }

 private:
  std::deque<Node> nodes_;  // stable references across push_back
  std::unordered_map<const Parameter<T>*, std::size_t> param_leaves_;
  bool grad_enabled_ = true;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->node(id_).value;
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace bcd
