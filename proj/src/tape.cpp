#include "ganforge/tape.hpp"

#include <algorithm>

#include "ganforge/ops.hpp"

namespace ganforge {

Tape& Var::tape() const {
  if (!tape_) throw ValidationError("use of an unbound Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

bool Var::requires_grad() const { return tape().requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = requires_grad ? "leaf" : "constant";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ValidationError("op '" + n.op + "' mixes values from different tapes");
    n.inputs.push_back(in.id());
    any = any || nodes_[in.id()].requires_grad;
  }
  n.requires_grad = grad_enabled_ && any;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<Var> Tape::sweep(std::size_t root, const Var& seed, std::span<const std::size_t> targets) {
  std::vector<Var> grads(root + 1);
  if (targets.empty()) return grads;

  // reach[i]: node i lies on some path from a target to the root.
  const std::size_t lo = *std::min_element(targets.begin(), targets.end());
  std::vector<char> reach(root + 1, 0);
  for (auto t : targets) {
    if (t <= root) reach[t] = 1;
  }
  for (std::size_t i = lo; i <= root; ++i) {
    if (reach[i] || !nodes_[i].requires_grad) continue;
    for (auto in : nodes_[i].inputs) {
      if (in >= lo && reach[in]) {
        reach[i] = 1;
        break;
      }
    }
  }
  if (!reach[root]) return grads;

  grads[root] = seed;
  for (std::size_t i = root + 1; i-- > lo;) {
    if (!grads[i].valid() || !reach[i] || nodes_[i].leaf) continue;
    // Copy: the call below appends nodes.
    const BackwardFn fn = nodes_[i].backward;
    const std::vector<std::size_t> ins = nodes_[i].inputs;
    if (!fn) continue;
    std::vector<bool> needed(ins.size());
    for (std::size_t k = 0; k < ins.size(); ++k) needed[k] = ins[k] >= lo && reach[ins[k]];
    const std::vector<Var> in_grads = fn(grads[i], needed);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (!needed[k] || k >= in_grads.size() || !in_grads[k].valid()) continue;
      auto& slot = grads[ins[k]];
      slot = slot.valid() ? ops::add(slot, in_grads[k]) : in_grads[k];
    }
    if (i != root) grads[i] = Var();
  }
  return grads;
}

std::vector<Var> Tape::gradient(const Var& output, std::span<const Var> wrt, bool create_graph, Var seed) {
  if (&output.tape() != this) throw ValidationError("gradient of a Var from another tape");
  if (!seed.valid()) {
    if (output.value().numel() != 1) {
      throw DimensionError("gradient of non-scalar output " + shape_str(output.shape()) + " needs a seed");
    }
    seed = constant(Tensor(output.shape(), 1.0));
  } else if (seed.shape() != output.shape()) {
    throw DimensionError("gradient seed shape " + shape_str(seed.shape()) + " differs from output " +
                         shape_str(output.shape()));
  }
  std::vector<std::size_t> targets;
  for (const auto& w : wrt) targets.push_back(w.id());

  std::vector<Var> grads;
  {
    const bool saved = grad_enabled_;
    grad_enabled_ = create_graph && saved;
    try {
      grads = sweep(output.id(), seed, targets);
    } catch (...) {
      grad_enabled_ = saved;
      throw;
    }
    grad_enabled_ = saved;
  }

  std::vector<Var> out;
  for (const auto& w : wrt) {
    Var g = w.id() < grads.size() ? grads[w.id()] : Var();
    if (!g.valid()) g = constant(Tensor(w.shape(), 0.0));
    out.push_back(g);
  }
  return out;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ValidationError("backward of a Var from another tape");
  if (loss.value().numel() != 1) {
    throw DimensionError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const std::size_t mark = nodes_.size();
  std::vector<std::size_t> leaves;
  for (std::size_t i = 0; i < mark; ++i) {
    if (nodes_[i].leaf && nodes_[i].requires_grad) leaves.push_back(i);
  }
  std::vector<Var> wrt;
  for (auto id : leaves) wrt.emplace_back(this, id);
  const std::vector<Var> g = gradient(loss, wrt, false);
  for (std::size_t k = 0; k < leaves.size(); ++k) nodes_[leaves[k]].grad = g[k].value();
  truncate(mark);
}

const Tensor& Tape::grad(const Var& leaf) const {
  const Node& n = nodes_.at(leaf.id());
  if (!n.leaf || !n.requires_grad) throw ValidationError("grad() requested for a non-trainable node");
  if (n.grad.empty()) throw ValidationError("grad() before backward()");
  return n.grad;
}

void Tape::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(n), nodes_.end());
}

}  // namespace ganforge
