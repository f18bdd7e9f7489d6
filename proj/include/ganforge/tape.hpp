#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ganforge/tensor.hpp"

namespace ganforge {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives
/// and has not been truncated below it.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Maps the gradient flowing into a node onto gradients for its inputs.
/// `needed[k]` says whether input k's gradient will be consumed; the function may
/// return an invalid Var for any input it does not differentiate.
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out, const std::vector<bool>& needed)>;

/// Append-only record of a computation. Node inputs always precede the node, so a
/// reverse sweep is a valid topological order.
///
/// Gradients are themselves produced by tape operations. With create_graph the
/// gradient nodes stay differentiable (used for input-gradient penalties);
/// otherwise they are recorded as constants and the caller may drop them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an op result. The node requires grad when recording is enabled and
  /// any input requires grad; otherwise `backward` is discarded.
  Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }

  /// d(output)/d(wrt[i]) as tape values. `seed` defaults to ones when output is a
  /// single element; non-scalar outputs need an explicit seed.
  std::vector<Var> gradient(const Var& output, std::span<const Var> wrt, bool create_graph = false,
                            Var seed = {});

  /// Reverse sweep from a scalar loss that stores a gradient for every leaf
  /// requiring grad (zeros for leaves the loss does not touch). Gradient nodes are
  /// discarded afterwards.
  void backward(const Var& loss);
  const Tensor& grad(const Var& leaf) const;

  /// Drops every node with id >= n.
  void truncate(std::size_t n);

  /// Disables recording of differentiable nodes for its lifetime.
  class NoGrad {
   public:
    explicit NoGrad(Tape& t) : tape_(t), saved_(t.grad_enabled_) { t.grad_enabled_ = false; }
    ~NoGrad() { tape_.grad_enabled_ = saved_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    Tape& tape_;
    bool saved_;
  };

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
    Tensor grad;
  };

  std::vector<Var> sweep(std::size_t root, const Var& seed, std::span<const std::size_t> targets);

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace ganforge
