#include "pnpreg/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace pnpreg {

CGResult conjugate_gradient(const std::function<Tensor(const Tensor&)>& apply_m, const Tensor& b, Tensor x0,
                            const CGOptions& options) {
  CGResult out;
  out.x = x0.defined() ? std::move(x0) : b.zeros_like();
  const double threshold = options.tolerance * std::max(1.0, std::sqrt(squared_norm(b)));
  Tensor r = sub(b, apply_m(out.x));
  double rr = squared_norm(r);
  out.residual = std::sqrt(rr);
  if (out.residual <= threshold) {
    out.converged = true;
    return out;
  }
  Tensor p = r;
  for (std::size_t k = 0; k < options.max_iterations; ++k) {
    const Tensor mp = apply_m(p);
    const double pmp = dot(p, mp);
    if (!(pmp > 0)) break;  // lost positive definiteness or breakdown
    const double a = rr / pmp;
    axpy_inplace(out.x, a, p);
    axpy_inplace(r, -a, mp);
    const double rr_new = squared_norm(r);
    out.iterations = k + 1;
    out.residual = std::sqrt(rr_new);
    if (out.residual <= threshold) {
      // Recompute the true residual so drift in the recurrence cannot hide.
      out.residual = std::sqrt(squared_norm(sub(b, apply_m(out.x))));
      if (out.residual <= threshold) {
        out.converged = true;
        return out;
      }
      r = sub(b, apply_m(out.x));
      p = r;
      rr = squared_norm(r);
      continue;
    }
    p = axpy(r, rr_new / rr, p);
    rr = rr_new;
  }
  return out;
}

}  // namespace pnpreg
