#pragma once

// Helpers shared by the unit tests: seeded random tensors, finite-difference
// gradient checks and a dense matrix view of a linear operator.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "pnpreg/autodiff.hpp"
#include "pnpreg/degradations.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg::test {

inline Tensor randn(Shape shape, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n01;
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, s * n01(rng));
  return t;
}

inline Tensor randu(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u;
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, u(rng));
  return t;
}

// max_i |fd_i - g_i| / max(1, |fd_i|) for a scalar function of one leaf.
inline double gradcheck(const Tensor& x, const std::function<Var(Tape&, Var)>& f, double h = 1e-6) {
  Tape tape;
  const Var leaf = tape.leaf(x);
  tape.backward(f(tape, leaf));
  const Tensor g = tape.grad(leaf);
  const auto eval = [&](const Tensor& p) {
    Tape t;
    return f(t, t.constant(p)).value().item();
  };
  double worst = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Tensor a = x, b = x;
    a.set(i, x.item(i) + h);
    b.set(i, x.item(i) - h);
    const double fd = (eval(a) - eval(b)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g.item(i)) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

inline Eigen::VectorXd to_eigen(const Tensor& t) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.numel()));
  for (std::size_t i = 0; i < t.numel(); ++i) v[static_cast<Eigen::Index>(i)] = t.item(i);
  return v;
}

inline Tensor from_eigen(const Eigen::VectorXd& v, const Shape& shape) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, v[static_cast<Eigen::Index>(i)]);
  return t;
}

// Columns A e_j, one per input pixel.
inline Eigen::MatrixXd dense(const LinearOperator& op) {
  const std::size_t n = shape_numel(op.input_shape()), m = shape_numel(op.output_shape());
  Eigen::MatrixXd a(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  Tensor e(op.input_shape());
  for (std::size_t j = 0; j < n; ++j) {
    e.set(j, 1.0);
    a.col(static_cast<Eigen::Index>(j)) = to_eigen(op.apply(e));
    e.set(j, 0.0);
  }
  return a;
}

}  // namespace pnpreg::test
