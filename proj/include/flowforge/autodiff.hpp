#pragma once

#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "flowforge/tensor.hpp"

namespace flowforge {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid for the
/// lifetime of the owning tape.
template <typename T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<T>* tape() const { return tape_; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode gradient tape. Operations append nodes in execution order;
/// backward() replays them in reverse, accumulating into per-node buffers.
///
/// A backward rule receives the gradient of the node's output and one
/// pointer per input. The pointer is null when that input does not need a
/// gradient; otherwise it points at a zero-initialised (or partially
/// accumulated) buffer of the input's shape, which the rule adds into.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(std::shared_ptr<const Tensor<T>> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    return leaf(std::make_shared<const Tensor<T>>(std::move(value)), requires_grad);
  }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an operation result. The backward rule is kept only when at
  /// least one input requires a gradient.
  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, Backward backward) {
    Node node{std::make_shared<const Tensor<T>>(std::move(value)), {}, {}, false};
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw std::logic_error("tape: input recorded on a different tape");
      node.inputs.push_back(in.id_);
      node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Computes d(loss)/d(node) for every node that requires a gradient.
  /// Previous gradients on this tape are discarded.
  void backward(const Var<T>& loss) {
    if (loss.tape_ != this) throw std::logic_error("tape: loss recorded on a different tape");
    const Tensor<T>& lv = *nodes_[loss.id_].value;
    if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got " + lv.shape().str());
    grads_.assign(nodes_.size(), Tensor<T>());
    if (!nodes_[loss.id_].requires_grad) return;
    grads_[loss.id_] = Tensor<T>::ones(lv.shape());

    std::vector<Tensor<T>*> ptrs;
    for (int i = loss.id_; i >= 0; --i) {
      Node& node = nodes_[i];
      if (!node.backward || grads_[i].empty()) continue;
      ptrs.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const int j = node.inputs[k];
        if (!nodes_[j].requires_grad) continue;
        if (grads_[j].empty()) grads_[j] = Tensor<T>::zeros(nodes_[j].value->shape());
        ptrs[k] = &grads_[j];
      }
      node.backward(grads_[i], ptrs);
    }
  }

  /// Gradient of the last backward() loss w.r.t. `v`; zeros when `v` was
  /// not on any path to the loss.
  const Tensor<T>& grad(const Var<T>& v) const {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    if (grads_[v.id_].empty()) grads_[v.id_] = Tensor<T>::zeros(v.shape());
    return grads_[v.id_];
  }
  bool has_grad(const Var<T>& v) const {
    return static_cast<std::size_t>(v.id_) < grads_.size() && !grads_[v.id_].empty() && nodes_[v.id_].requires_grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var<T>;

  struct Node {
    std::shared_ptr<const Tensor<T>> value;
    std::vector<int> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  mutable std::vector<Tensor<T>> grads_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return *tape_->nodes_[id_].value;
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->nodes_[id_].requires_grad;
}

}  // namespace flowforge
