#include "pnpreg/priors.hpp"

#include <cmath>
#include <sstream>

namespace pnpreg {

Tensor Prior::grad(const Tensor&) const { throw UnsupportedOperation(name() + " prior has no gradient"); }
Tensor Prior::prox(const Tensor&, double) const { throw UnsupportedOperation(name() + " prior has no prox"); }
double Prior::value(const Tensor&) const { throw UnsupportedOperation(name() + " prior has no value"); }
Tensor Prior::quadratic_apply(const Tensor&) const { throw UnsupportedOperation(name() + " prior is not quadratic"); }

Tensor prior_grad(const Prior& prior, const Tensor& x) {
  if (!prior.capabilities().has_grad) throw UnsupportedOperation(prior.name() + " prior has no gradient");
  return prior.grad(x);
}

Tensor prior_prox(const Prior& prior, const Tensor& z, double sigma) {
  if (!prior.capabilities().has_prox) throw UnsupportedOperation(prior.name() + " prior has no prox");
  if (!(sigma >= 0)) throw ArgumentError("prox sigma must be non-negative");
  if (sigma == 0) return z;
  return prior.prox(z, sigma);
}

double prior_value(const Prior& prior, const Tensor& x) {
  if (!prior.capabilities().has_value) throw UnsupportedOperation(prior.name() + " prior has no value");
  return prior.value(x);
}

Tensor laplacian(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("laplacian: expected N,C,H,W, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t planes = x.dim(0) * x.dim(1);
  Tensor out(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const T* xd = x.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* xp = xd + p * h * w;
      T* op = od + p * h * w;
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t up = (i + h - 1) % h, dn = (i + 1) % h;
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t lf = (j + w - 1) % w, rt = (j + 1) % w;
          op[i * w + j] = 4 * xp[i * w + j] - xp[up * w + j] - xp[dn * w + j] - xp[i * w + lf] - xp[i * w + rt];
        }
      }
    }
  });
  return out;
}

Tensor LaplacianPrior::prox(const Tensor& z, double sigma) const {
  const double s2 = sigma * sigma;
  const auto apply = [&](const Tensor& v) { return axpy(v, s2, laplacian(laplacian(v))); };
  CGResult r = conjugate_gradient(apply, z, z.zeros_like(), cg_);
  if (!r.converged) {
    std::ostringstream msg;
    msg << "laplacian prox: CG stopped after " << r.iterations << " iterations with residual " << r.residual;
    throw ConvergenceError(msg.str(), r.residual);
  }
  return std::move(r.x);
}

Tensor reg_grad(const ReGNet& net, const Tensor& x) { return net.reg_grad(x); }

Tensor denoise(const DenoiserNet& net, const Tensor& z, double sigma) { return net.denoise(z, sigma); }

double residual_identity_error(const Prior& gradient, const Prior& denoiser, const Tensor& z, double sigma) {
  if (!(sigma > 0)) throw ArgumentError("residual_identity_error needs sigma > 0");
  const Tensor d = prior_prox(denoiser, z, sigma);
  const Tensor g = prior_grad(gradient, d);
  const Tensor r = sub(scale(g, sigma * sigma), sub(z, d));
  return squared_norm(r) / static_cast<double>(z.numel());
}

double residual_identity_error(const ReGNet& g, const DenoiserNet& d, const Tensor& z, double sigma) {
  if (!(sigma > 0)) throw ArgumentError("residual_identity_error needs sigma > 0");
  const Tensor dz = d.denoise(z, sigma);
  const Tensor r = sub(scale(g.reg_grad(dz), sigma * sigma), sub(z, dz));
  return squared_norm(r) / static_cast<double>(z.numel());
}

double jacobian_asymmetry(const Prior& gradient, const Tensor& x, double h) {
  const std::size_t n = x.numel();
  if (n > 4096) throw ArgumentError("jacobian_asymmetry: input too large for dense assembly");
  std::vector<double> j(n * n);
  Tensor probe = x.to(DType::F64);
  for (std::size_t c = 0; c < n; ++c) {
    const double v = probe.item(c);
    probe.set(c, v + h);
    const Tensor plus = prior_grad(gradient, probe).to(DType::F64);
    probe.set(c, v - h);
    const Tensor minus = prior_grad(gradient, probe).to(DType::F64);
    probe.set(c, v);
    for (std::size_t r = 0; r < n; ++r) j[r * n + c] = (plus.item(r) - minus.item(r)) / (2 * h);
  }
  double num = 0, den = 0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double d = j[r * n + c] - j[c * n + r];
      num += d * d;
      den += j[r * n + c] * j[r * n + c];
    }
  }
  return den > 0 ? std::sqrt(num / den) : 0.0;
}

}  // namespace pnpreg
