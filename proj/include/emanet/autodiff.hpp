#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "emanet/tensor.hpp"

namespace emanet {

template <typename Scalar>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool belongs_to(const Tape<Scalar>* tape) const { return tape_ == tape; }

  const Tensor<Scalar>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Index dim(int axis) const { return value().dim(axis); }
  int rank() const { return value().rank(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  /// Gradient after `Tape::backward`; zeros if the node was not reached.
  const Tensor<Scalar>& grad() const { return tape_->grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in execution order so a single reverse sweep yields
/// gradients for every leaf that requires them. Single-threaded.
template <typename Scalar>
class Tape {
 public:
  /// Receives the tape and the gradient flowing into the op's output.
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, true});
    return Var<Scalar>(this, nodes_.size() - 1);
  }

  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), false); }

  /// Adds the output of an op. The backward rule is kept only if some input
  /// requires a gradient.
  Var<Scalar> record(Tensor<Scalar> output, std::initializer_list<Var<Scalar>> inputs, BackwardFn backward) {
    return record(std::move(output), std::vector<Var<Scalar>>(inputs), std::move(backward));
  }

  Var<Scalar> record(Tensor<Scalar> output, const std::vector<Var<Scalar>>& inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) {
      if (!v.belongs_to(this)) throw ContractError("op input recorded on a different tape");
      needs = needs || nodes_[v.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(output), {}, needs, false});
    const std::size_t out = nodes_.size() - 1;
    if (needs) ops_.push_back(Op{out, std::move(backward)});
    return Var<Scalar>(this, out);
  }

  const Tensor<Scalar>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  const Tensor<Scalar>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
    return n.grad;
  }

  /// Mutable gradient buffer for accumulation inside backward rules, or
  /// nullptr when the node does not take gradients.
  Tensor<Scalar>* grad_sink(const Var<Scalar>& v) {
    Node& n = nodes_.at(v.id());
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
    return &n.grad;
  }

  void accumulate(const Var<Scalar>& v, const Tensor<Scalar>& g) {
    if (Tensor<Scalar>* sink = grad_sink(v)) sink->array() += g.array();
  }

  /// Reverse sweep from a scalar loss. Every requires_grad leaf ends up with
  /// a gradient buffer (zeros when unreachable from the loss).
  void backward(const Var<Scalar>& loss) {
    if (loss.value().size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    for (auto& n : nodes_) {
      if (n.requires_grad && !n.leaf) n.grad = Tensor<Scalar>();
    }
    Node& root = nodes_.at(loss.id());
    root.grad = Tensor<Scalar>(root.value.shape(), Scalar(1));
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (it->output > loss.id()) continue;
      Node& out = nodes_[it->output];
      if (out.grad.empty()) continue;
      it->backward(*this, out.grad);
    }
    for (auto& n : nodes_) {
      if (n.leaf && n.requires_grad && n.grad.empty()) n.grad = Tensor<Scalar>(n.value.shape());
    }
  }

  /// Clears leaf gradients so the tape can be swept again.
  void zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor<Scalar>();
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
    bool requires_grad;
    bool leaf;
  };
  struct Op {
    std::size_t output;
    BackwardFn backward;
  };

  // deque: references to existing values stay valid while new nodes are added
  std::deque<Node> nodes_;
  std::vector<Op> ops_;
};

}  // namespace emanet
