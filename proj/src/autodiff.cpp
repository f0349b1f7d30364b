#include "pnpreg/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace pnpreg {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& p, bool trainable) {
  Node n;
  n.alias = &p.value;
  n.is_leaf = true;
  n.requires_grad = trainable;
  n.param = trainable ? &p : nullptr;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::alias(const Tensor& value) {
  Node n;
  n.alias = &value;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ArgumentError("tape: parent id out of range");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.alias ? *n.alias : n.value;
}

Tensor Tape::grad(Var leaf) const {
  const Node& n = nodes_.at(leaf.id());
  if (n.accum.defined()) return n.accum;
  return value(leaf.id()).zeros_like();
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ArgumentError("backward: variable belongs to another tape");
  const Tensor& lv = value(loss.id());
  if (lv.numel() != 1) throw ArgumentError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
  if (!nodes_[loss.id()].requires_grad) return;

  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor::full(lv.shape(), 1.0, lv.dtype());
  std::vector<Tensor> parent_grads;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!grads[i].defined() || !node.requires_grad) continue;
    if (node.is_leaf) {
      Tensor& target = node.param ? node.param->grad : node.accum;
      if (!target.defined() || target.shape() != grads[i].shape()) {
        target = std::move(grads[i]);
      } else {
        axpy_inplace(target, 1.0, grads[i]);
      }
    } else {
      parent_grads.assign(node.parents.size(), Tensor());
      node.backward(*this, grads[i], parent_grads);
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const std::size_t p = node.parents[k];
        if (!nodes_[p].requires_grad || !parent_grads[k].defined()) continue;
        if (!grads[p].defined()) {
          grads[p] = std::move(parent_grads[k]);
        } else {
          axpy_inplace(grads[p], 1.0, parent_grads[k]);
        }
      }
    }
    grads[i] = Tensor();
  }
}

namespace ad {

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` viewed with shape `out` (zero on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + (r - in.size());
    strides[oi] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

// Calls f(out_flat, a_flat, b_flat) over every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F f) {
  const std::size_t n = shape_numel(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

// Sums g (shape `out`) down to `in` by reducing broadcast axes.
Tensor reduce_to(const Tensor& g, const Shape& in) {
  if (g.shape() == in) return g;
  Tensor r(in, g.dtype());
  visit_dtype(g.dtype(), [&]<typename T>() {
    auto gd = g.data<T>();
    auto rd = r.data<T>();
    for_each_broadcast(g.shape(), in, in, [&](std::size_t o, std::size_t i, std::size_t) { rd[i] += gd[o]; });
  });
  return r;
}

enum class BinOp { Add, Sub, Mul };

Var binary(Var a, Var b, BinOp op) {
  Tape& tape = a.tape();
  if (&b.tape() != &tape) throw ArgumentError("binary op across tapes");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_dtype(av, bv, "elementwise");
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  Tensor out(out_shape, av.dtype());
  visit_dtype(av.dtype(), [&]<typename T>() {
    auto x = av.data<T>();
    auto y = bv.data<T>();
    auto o = out.data<T>();
    for_each_broadcast(out_shape, av.shape(), bv.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
      switch (op) {
        case BinOp::Add: o[i] = x[ia] + y[ib]; break;
        case BinOp::Sub: o[i] = x[ia] - y[ib]; break;
        case BinOp::Mul: o[i] = x[ia] * y[ib]; break;
      }
    });
  });
  const std::size_t ida = a.id(), idb = b.id();
  return tape.record(std::move(out), {ida, idb},
                     [ida, idb, op](const Tape& t, const Tensor& g, std::vector<Tensor>& pg) {
                       const Tensor& x = t.value(ida);
                       const Tensor& y = t.value(idb);
                       if (op == BinOp::Add || op == BinOp::Sub) {
                         if (t.requires_grad(ida)) pg[0] = reduce_to(g, x.shape());
                         if (t.requires_grad(idb)) {
                           pg[1] = reduce_to(op == BinOp::Sub ? pnpreg::scale(g, -1.0) : g, y.shape());
                         }
                         return;
                       }
                       // g * other, broadcast to the output shape, then reduced.
                       Tensor ga(g.shape(), g.dtype()), gb(g.shape(), g.dtype());
                       visit_dtype(g.dtype(), [&]<typename T>() {
                         auto gd = g.data<T>();
                         auto xd = x.data<T>();
                         auto yd = y.data<T>();
                         auto gad = ga.data<T>();
                         auto gbd = gb.data<T>();
                         for_each_broadcast(g.shape(), x.shape(), y.shape(),
                                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                              gad[i] = gd[i] * yd[ib];
                                              gbd[i] = gd[i] * xd[ia];
                                            });
                       });
                       if (t.requires_grad(ida)) pg[0] = reduce_to(ga, x.shape());
                       if (t.requires_grad(idb)) pg[1] = reduce_to(gb, y.shape());
                     });
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  const Tensor& av = a.value();
  Tensor out(av.shape(), av.dtype());
  visit_dtype(av.dtype(), [&]<typename T>() {
    auto x = av.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(x[i]);
  });
  const std::size_t id = a.id();
  return a.tape().record(std::move(out), {id}, [id, deriv](const Tape& t, const Tensor& g, std::vector<Tensor>& pg) {
    const Tensor& x = t.value(id);
    Tensor gx(x.shape(), x.dtype());
    visit_dtype(x.dtype(), [&]<typename T>() {
      auto xd = x.data<T>();
      auto gd = g.data<T>();
      auto o = gx.data<T>();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = gd[i] * deriv(xd[i]);
    });
    pg[0] = std::move(gx);
  });
}

Var reduce_sum(Var a, double factor) {
  const Tensor& av = a.value();
  Tensor out = Tensor::full({}, factor * pnpreg::sum(av), av.dtype());
  const std::size_t id = a.id();
  return a.tape().record(std::move(out), {id}, [id, factor](const Tape& t, const Tensor& g, std::vector<Tensor>& pg) {
    const Tensor& x = t.value(id);
    pg[0] = Tensor::full(x.shape(), factor * g.item(), x.dtype());
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinOp::Add); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul); }

Var scale(Var a, double s) {
  const std::size_t id = a.id();
  return a.tape().record(pnpreg::scale(a.value(), s), {id},
                         [s](const Tape&, const Tensor& g, std::vector<Tensor>& pg) { pg[0] = pnpreg::scale(g, s); });
}

Var relu(Var a) {
  return unary(
      a, [](auto x) { return x > 0 ? x : decltype(x)(0); }, [](auto x) { return x > 0 ? decltype(x)(1) : decltype(x)(0); });
}

Var square(Var a) {
  return unary(
      a, [](auto x) { return x * x; }, [](auto x) { return 2 * x; });
}

Var abs(Var a) {
  return unary(
      a, [](auto x) { return std::abs(x); },
      [](auto x) { return x > 0 ? decltype(x)(1) : (x < 0 ? decltype(x)(-1) : decltype(x)(0)); });
}

Var sum(Var a) { return reduce_sum(a, 1.0); }

Var mean(Var a) {
  const auto n = a.value().numel();
  return reduce_sum(a, n ? 1.0 / static_cast<double>(n) : 0.0);
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var conv2d(Var x, Var w, Padding padding, std::size_t stride) {
  Tensor out = kernels::conv2d_forward(x.value(), w.value(), padding, stride);
  const std::size_t ix = x.id(), iw = w.id();
  return x.tape().record(std::move(out), {ix, iw},
                         [ix, iw, padding, stride](const Tape& t, const Tensor& g, std::vector<Tensor>& pg) {
                           const Tensor& xv = t.value(ix);
                           const Tensor& wv = t.value(iw);
                           if (t.requires_grad(ix)) {
                             pg[0] = kernels::conv2d_backward_input(g, wv, padding, stride, xv.shape());
                           }
                           if (t.requires_grad(iw)) {
                             pg[1] = kernels::conv2d_backward_weight(xv, g, padding, stride, wv.shape());
                           }
                         });
}

Var conv_transpose2d(Var x, Var w, Padding padding, std::size_t stride, const Shape& out_shape) {
  Tensor out = kernels::conv2d_backward_input(x.value(), w.value(), padding, stride, out_shape);
  const std::size_t ix = x.id(), iw = w.id();
  return x.tape().record(std::move(out), {ix, iw},
                         [ix, iw, padding, stride](const Tape& t, const Tensor& g, std::vector<Tensor>& pg) {
                           const Tensor& xv = t.value(ix);
                           const Tensor& wv = t.value(iw);
                           if (t.requires_grad(ix)) pg[0] = kernels::conv2d_forward(g, wv, padding, stride);
                           if (t.requires_grad(iw)) {
                             pg[1] = kernels::conv2d_backward_weight(g, xv, padding, stride, wv.shape());
                           }
                         });
}

Var downsample(Var x, std::size_t factor) {
  return linear(
      x, [factor](const Tensor& v) { return kernels::downsample(v, factor); },
      [factor](const Tensor& g) { return kernels::upsample_zero_fill(g, factor); });
}

Var upsample_zero_fill(Var x, std::size_t factor) {
  return linear(
      x, [factor](const Tensor& v) { return kernels::upsample_zero_fill(v, factor); },
      [factor](const Tensor& g) { return kernels::downsample(g, factor); });
}

Var pad_replicate(Var x, std::size_t h, std::size_t w) {
  const std::size_t ih = x.value().dim(2), iw = x.value().dim(3);
  return linear(
      x, [h, w](const Tensor& v) { return kernels::pad_replicate(v, h, w); },
      [ih, iw](const Tensor& g) { return kernels::pad_replicate_adjoint(g, ih, iw); });
}

Var crop(Var x, std::size_t h, std::size_t w) {
  const std::size_t ih = x.value().dim(2), iw = x.value().dim(3);
  return linear(
      x, [h, w](const Tensor& v) { return kernels::crop(v, h, w); },
      [ih, iw](const Tensor& g) { return kernels::crop_adjoint(g, ih, iw); });
}

Var concat_channels(Var a, Var b) {
  const std::size_t ca = a.value().dim(1);
  const std::size_t cb = b.value().dim(1);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(kernels::concat_channels(a.value(), b.value()), {ia, ib},
                         [ca, cb](const Tape&, const Tensor& g, std::vector<Tensor>& pg) {
                           pg[0] = kernels::slice_channels(g, 0, ca);
                           pg[1] = kernels::slice_channels(g, ca, ca + cb);
                         });
}

Var slice_channels(Var x, std::size_t begin, std::size_t end) {
  const Shape full = x.value().shape();
  return x.tape().record(kernels::slice_channels(x.value(), begin, end), {x.id()},
                         [full, begin](const Tape&, const Tensor& g, std::vector<Tensor>& pg) {
                           Tensor out(full, g.dtype());
                           const std::size_t plane = full[2] * full[3];
                           const std::size_t width = g.dim(1) * plane;
                           visit_dtype(g.dtype(), [&]<typename T>() {
                             const T* gd = g.data<T>().data();
                             T* od = out.data<T>().data();
                             for (std::size_t n = 0; n < full[0]; ++n) {
                               std::copy_n(gd + n * width, width, od + (n * full[1] + begin) * plane);
                             }
                           });
                           pg[0] = std::move(out);
                         });
}

Var linear(Var x, const std::function<Tensor(const Tensor&)>& forward, std::function<Tensor(const Tensor&)> adjoint) {
  return x.tape().record(forward(x.value()), {x.id()},
                         [adj = std::move(adjoint)](const Tape&, const Tensor& g, std::vector<Tensor>& pg) {
                           pg[0] = adj(g);
                         });
}

}  // namespace ad

}  // namespace pnpreg
