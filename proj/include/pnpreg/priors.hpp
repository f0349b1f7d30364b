#pragma once

#include <memory>
#include <string>

#include "pnpreg/linalg.hpp"
#include "pnpreg/network.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg {

struct PriorCapabilities {
  bool has_grad = false;
  bool has_prox = false;
  bool has_value = false;
  bool is_quadratic = false;  // phi(x) = 1/2 <x, Q x> with Q symmetric PSD
};

// The regularizer phi. prox(z, s) = argmin_x 1/2 ||x - z||^2 + s^2 phi(x).
class Prior {
 public:
  virtual ~Prior() = default;
  virtual std::string name() const = 0;
  virtual PriorCapabilities capabilities() const = 0;

  virtual Tensor grad(const Tensor& x) const;
  virtual Tensor prox(const Tensor& z, double sigma) const;
  virtual double value(const Tensor& x) const;
  // Q x for quadratic priors.
  virtual Tensor quadratic_apply(const Tensor& x) const;
};

// Checked entry points: missing capability -> UnsupportedOperation,
// sigma < 0 -> ArgumentError, prox(z, 0) = z for every prior.
Tensor prior_grad(const Prior& prior, const Tensor& x);
Tensor prior_prox(const Prior& prior, const Tensor& z, double sigma);
double prior_value(const Prior& prior, const Tensor& x);

// phi(x) = 1/2 ||x||^2.
class TikhonovPrior final : public Prior {
 public:
  std::string name() const override { return "tikhonov"; }
  PriorCapabilities capabilities() const override { return {true, true, true, true}; }
  Tensor grad(const Tensor& x) const override { return x; }
  Tensor prox(const Tensor& z, double sigma) const override { return scale(z, 1.0 / (1.0 + sigma * sigma)); }
  double value(const Tensor& x) const override { return 0.5 * squared_norm(x); }
  Tensor quadratic_apply(const Tensor& x) const override { return x; }
};

// Circular 5-point Laplacian per channel: (Lx)[i,j] = 4x[i,j] - sum of the 4 neighbours.
Tensor laplacian(const Tensor& x);

// phi(x) = 1/2 ||L x||^2; the prox solves (I + s^2 L^T L) x = z by CG.
class LaplacianPrior final : public Prior {
 public:
  explicit LaplacianPrior(CGOptions cg = {}) : cg_(cg) {}
  std::string name() const override { return "laplacian"; }
  PriorCapabilities capabilities() const override { return {true, true, true, true}; }
  Tensor grad(const Tensor& x) const override { return laplacian(laplacian(x)); }
  Tensor prox(const Tensor& z, double sigma) const override;
  double value(const Tensor& x) const override { return 0.5 * squared_norm(laplacian(x)); }
  Tensor quadratic_apply(const Tensor& x) const override { return grad(x); }

 private:
  CGOptions cg_;
};

// grad phi ~ G(x).
class LearnedGradientPrior final : public Prior {
 public:
  explicit LearnedGradientPrior(std::shared_ptr<const ReGNet> net) : net_(std::move(net)) {}
  std::string name() const override { return "reg"; }
  PriorCapabilities capabilities() const override { return {true, false, false, false}; }
  Tensor grad(const Tensor& x) const override { return net_->reg_grad(x); }
  const ReGNet& net() const { return *net_; }

 private:
  std::shared_ptr<const ReGNet> net_;
};

// prox_{s^2 phi} ~ D_s.
class DenoiserPrior final : public Prior {
 public:
  explicit DenoiserPrior(std::shared_ptr<const DenoiserNet> net) : net_(std::move(net)) {}
  std::string name() const override { return "denoiser"; }
  PriorCapabilities capabilities() const override { return {false, true, false, false}; }
  Tensor prox(const Tensor& z, double sigma) const override { return net_->denoise(z, sigma); }
  const DenoiserNet& net() const { return *net_; }

 private:
  std::shared_ptr<const DenoiserNet> net_;
};

Tensor reg_grad(const ReGNet& net, const Tensor& x);
Tensor denoise(const DenoiserNet& net, const Tensor& z, double sigma);

// ||s^2 grad(prox(z, s)) - (z - prox(z, s))||^2 / numel(z), with grad taken
// from `gradient` and prox from `denoiser`.
double residual_identity_error(const Prior& gradient, const Prior& denoiser, const Tensor& z, double sigma);
double residual_identity_error(const ReGNet& g, const DenoiserNet& d, const Tensor& z, double sigma);

// Jacobian asymmetry ||J - J^T||_F / ||J||_F of the gradient field at x,
// assembled column by column with central differences. Diagnostic only.
double jacobian_asymmetry(const Prior& gradient, const Tensor& x, double h = 1e-4);

}  // namespace pnpreg
