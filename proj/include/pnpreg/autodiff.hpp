#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pnpreg/kernels.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg {

class Tape;

// A trainable tensor owned outside any tape (typically by a network).
// `grad` accumulates across backward passes until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.zeros_like()) {}
  void zero_grad() { grad = value.zeros_like(); }
};

// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
// tape is alive and has not been cleared.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording of tensor operations.
//
// Nodes are appended in evaluation order, so the node list is already a
// topological order; backward() replays it in reverse and each node's rule
// runs at most once. A Tape is meant for one thread.
class Tape {
 public:
  // parent_grads is sized like the parent list; the rule fills the entries
  // of parents that require a gradient and may leave the others undefined.
  using BackwardFn = std::function<void(const Tape& tape, const Tensor& grad_out, std::vector<Tensor>& parent_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives gradient.
  Var constant(Tensor value);
  // Leaf whose gradient accumulates on the tape; read it with grad().
  Var leaf(Tensor value);
  // Leaf aliasing a Parameter: no copy of the value, gradient goes to p.grad.
  // `trainable == false` records it as a constant (frozen weights).
  Var parameter(Parameter& p, bool trainable = true);
  // Constant leaf referencing external storage, which must outlive the tape.
  Var alias(const Tensor& value);

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates. Leaf gradients accumulate
  // additively across calls.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  // Accumulated gradient of a leaf() node (zeros if backward never reached it).
  Tensor grad(Var leaf) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  // Drops every node and saved intermediate.
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* alias = nullptr;  // parameter nodes reference external storage
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter* param = nullptr;
    Tensor accum;  // leaf() gradient accumulator
  };
  std::vector<Node> nodes_;
};

namespace ad {

using kernels::Padding;

Var add(Var a, Var b);  // numpy-style broadcasting
Var sub(Var a, Var b);  // numpy-style broadcasting
Var mul(Var a, Var b);  // numpy-style broadcasting
Var scale(Var a, double s);
Var relu(Var a);
Var square(Var a);
Var abs(Var a);
Var sum(Var a);
Var mean(Var a);
// Stops gradient flow: the result is a constant copy of a's value.
Var detach(Var a);

Var conv2d(Var x, Var w, Padding padding, std::size_t stride);
// Adjoint of conv2d in its input: maps N,Co,h,w to out_shape (N,Ci,H,W),
// with w laid out as the forward kernel Co,Ci,kh,kw.
Var conv_transpose2d(Var x, Var w, Padding padding, std::size_t stride, const Shape& out_shape);

Var downsample(Var x, std::size_t factor);
Var upsample_zero_fill(Var x, std::size_t factor);
Var pad_replicate(Var x, std::size_t h, std::size_t w);
Var crop(Var x, std::size_t h, std::size_t w);
Var concat_channels(Var a, Var b);
// Channels [begin, end) of x.
Var slice_channels(Var x, std::size_t begin, std::size_t end);

// Records y = L(x) for a fixed linear map; backward applies `adjoint`.
Var linear(Var x, const std::function<Tensor(const Tensor&)>& forward,
           std::function<Tensor(const Tensor&)> adjoint);

}  // namespace ad

}  // namespace pnpreg
