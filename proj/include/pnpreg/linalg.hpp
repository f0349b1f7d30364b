#pragma once

#include <cstddef>
#include <functional>

#include "pnpreg/tensor.hpp"

namespace pnpreg {

struct CGOptions {
  double tolerance = 1e-10;  // on ||b - M x||_2, scaled by max(1, ||b||_2)
  std::size_t max_iterations = 500;
};

struct CGResult {
  Tensor x;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

// Conjugate gradient for a symmetric positive definite operator M.
// Never throws on non-convergence; callers decide.
CGResult conjugate_gradient(const std::function<Tensor(const Tensor&)>& apply_m, const Tensor& b, Tensor x0,
                            const CGOptions& options = {});

}  // namespace pnpreg
