#include "pnpreg/solvers.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <sstream>

#include "pnpreg/kernels.hpp"
#include "pnpreg/metrics.hpp"

namespace pnpreg {

std::string SolveTrace::to_csv() const {
  std::string out = "iter,psnr,iterate_mse,objective\n";
  const auto num = [](double v) { return std::isnan(v) ? std::string() : fmt::format("{}", v); };
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{}\n", r.iter, num(r.psnr), r.iterate_mse, num(r.objective));
  }
  return out;
}

void GDConfig::validate() const {
  if (!(mu > 0)) throw ArgumentError("step size mu must be positive");
  if (!(sigma >= 0)) throw ArgumentError("regularization weight sigma must be non-negative");
  if (!(early_stop_mse >= 0)) throw ArgumentError("early-stop threshold must be non-negative");
}

void REDConfig::validate() const {
  if (!(mu > 0)) throw ArgumentError("step size mu must be positive");
  if (!(w >= 0)) throw ArgumentError("RED weight w must be non-negative");
  if (!(sigma_f > 0)) throw ArgumentError("RED denoiser sigma_f must be positive");
  if (!(early_stop_mse >= 0)) throw ArgumentError("early-stop threshold must be non-negative");
}

ADMMSchedule admm_schedule(double sigma, double s0, double sN, std::size_t iterations) {
  if (!(sigma > 0) || !(s0 > 0) || !(sN > 0)) throw ArgumentError("ADMM schedule needs positive sigma, s0, sN");
  if (s0 < sN) throw ArgumentError("ADMM schedule needs s0 >= sN");
  if (iterations == 0) throw ArgumentError("ADMM schedule needs N >= 1");
  const double r = sigma / s0;
  return {r * r, std::pow(s0 / sN, 2.0 / static_cast<double>(iterations))};
}

double ADMMConfig::effective_sigma(double sigma_n) { return std::max(sigma_n, 0.001 / 255.0); }

void ADMMConfig::validate() const {
  if (!(sigma > 0)) throw ArgumentError("ADMM sigma must be positive");
  if (!(early_stop_mse >= 0)) throw ArgumentError("early-stop threshold must be non-negative");
  (void)admm_schedule(sigma, s0, sN, std::max<std::size_t>(iterations, 1));
}

void UnrolledConfig::validate() const {
  if (!(mu > 0)) throw ArgumentError("unrolled step size must be positive");
  if (!(sigma >= 0) || !(sigma_n >= 0)) throw ArgumentError("unrolled sigma values must be non-negative");
  if (batch == 0) throw ArgumentError("unrolled batch must be positive");
  if (!(lr > 0)) throw ArgumentError("unrolled learning rate must be positive");
  if (log_every == 0) throw ArgumentError("log_every must be positive");
}

namespace {

using Field = std::function<Tensor(const Tensor&)>;

Tensor ensemble(const Field& f, const Tensor& x, bool on, std::size_t k) {
  if (!on) return f(x);
  const int t = static_cast<int>(k % 8);
  return kernels::dihedral_inverse(f(kernels::dihedral(x, t)), t);
}

void check_problem(const Tensor& y, const LinearOperator& a, const Tensor& x_init) {
  const auto& in = a.input_shape();
  const auto& out = a.output_shape();
  if (x_init.rank() != 4 || x_init.dim(1) != in[1] || x_init.dim(2) != in[2] || x_init.dim(3) != in[3]) {
    throw DimensionError("initial estimate " + shape_str(x_init.shape()) + " does not match operator input " +
                         shape_str(in));
  }
  if (y.rank() != 4 || y.dim(0) != x_init.dim(0) || y.dim(1) != out[1] || y.dim(2) != out[2] || y.dim(3) != out[3]) {
    throw DimensionError("observation " + shape_str(y.shape()) + " does not match operator output " + shape_str(out));
  }
}

struct Recorder {
  bool enabled;
  const Tensor* gt;
  std::function<double(const Tensor&)> objective;
  SolveTrace trace;

  void record(std::size_t iter, const Tensor& x, double mse) {
    if (!enabled) return;
    TraceRow row;
    row.iter = iter;
    row.iterate_mse = mse;
    if (gt) row.psnr = psnr(x, *gt);
    if (objective) row.objective = objective(x);
    trace.rows.push_back(row);
  }
};

// Shared loop for PnP-GD and RED-GD. `reg(x, k)` returns the already
// weighted regularization term of the gradient.
SolveResult gradient_descent(const Tensor& y_in, const LinearOperator& a, const std::function<Tensor(const Tensor&, std::size_t)>& reg,
                             double mu, std::size_t iterations, UpdateRule rule, const AdamOptions& adam_opts,
                             double early_stop, Recorder rec, const Tensor& x_init) {
  const Tensor y = y_in.to(x_init.dtype());
  Tensor x = x_init;
  AdamState adam;
  adam.options = adam_opts;
  adam.options.lr = mu;
  SolveResult out;
  for (std::size_t k = 0; k < iterations; ++k) {
    Tensor grad = a.adjoint(sub(a.apply(x), y));
    axpy_inplace(grad, 1.0, reg(x, k).to(x.dtype()));
    Tensor next = x;
    if (rule == UpdateRule::Plain) {
      axpy_inplace(next, -mu, grad);
    } else {
      Tensor* p = &next;
      const Tensor* g = &grad;
      if (grad.has_non_finite()) {
        throw SolverDiverged("non-finite gradient at iteration " + std::to_string(k), std::move(rec.trace));
      }
      adam_step(std::span<Tensor* const>(&p, 1), std::span<const Tensor* const>(&g, 1), adam);
    }
    if (next.has_non_finite()) {
      throw SolverDiverged("non-finite iterate at iteration " + std::to_string(k + 1), std::move(rec.trace));
    }
    const double mse = mean_squared_difference(next, x);
    x = std::move(next);
    out.iterations = k + 1;
    rec.record(k + 1, x, mse);
    if (early_stop > 0 && mse < early_stop) break;
  }
  out.x = std::move(x);
  out.trace = std::move(rec.trace);
  return out;
}

template <typename T>
std::shared_ptr<const T> borrow(const T& v) {
  return std::shared_ptr<const T>(&v, [](const T*) {});
}

}  // namespace

double map_objective(const LinearOperator& a, const Tensor& y, const Prior& prior, double sigma, const Tensor& x) {
  const Tensor r = sub(a.apply(x), y.to(x.dtype()));
  return 0.5 * squared_norm(r) + sigma * sigma * prior_value(prior, x);
}

SolveResult pnp_gd(const Tensor& y, const LinearOperator& a, const Prior& gradient, const GDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth) {
  cfg.validate();
  check_problem(y, a, x_init);
  if (!gradient.capabilities().has_grad) throw UnsupportedOperation(gradient.name() + " prior has no gradient");
  const double s2 = cfg.sigma * cfg.sigma;
  const Field field = [&](const Tensor& v) { return prior_grad(gradient, v); };
  Recorder rec{cfg.trace, ground_truth, {}, {}};
  if (gradient.capabilities().has_value) {
    rec.objective = [&](const Tensor& x) { return map_objective(a, y, gradient, cfg.sigma, x); };
  }
  return gradient_descent(
      y, a, [&](const Tensor& x, std::size_t k) { return scale(ensemble(field, x, cfg.self_ensemble, k), s2); },
      cfg.mu, cfg.iterations, cfg.rule, cfg.adam, cfg.early_stop_mse, std::move(rec), x_init);
}

SolveResult pnp_gd(const Tensor& y, const LinearOperator& a, const ReGNet& g, const GDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth) {
  return pnp_gd(y, a, LearnedGradientPrior(borrow(g)), cfg, x_init, ground_truth);
}

SolveResult red_gd(const Tensor& y, const LinearOperator& a, const Prior& denoiser, const REDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth) {
  cfg.validate();
  check_problem(y, a, x_init);
  if (!denoiser.capabilities().has_prox) throw UnsupportedOperation(denoiser.name() + " prior has no denoiser");
  const Field field = [&](const Tensor& v) { return prior_prox(denoiser, v, cfg.sigma_f); };
  Recorder rec{cfg.trace, ground_truth, {}, {}};
  return gradient_descent(
      y, a,
      [&](const Tensor& x, std::size_t k) {
        return scale(sub(x, ensemble(field, x, cfg.self_ensemble, k).to(x.dtype())), cfg.w);
      },
      cfg.mu, cfg.iterations, cfg.rule, cfg.adam, cfg.early_stop_mse, std::move(rec), x_init);
}

SolveResult red_gd(const Tensor& y, const LinearOperator& a, const DenoiserNet& d, const REDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth) {
  return red_gd(y, a, DenoiserPrior(borrow(d)), cfg, x_init, ground_truth);
}

Tensor solve_data_subproblem(const LinearOperator& a, const Tensor& y_in, double rho, const Tensor& v,
                             const CGOptions& cg) {
  if (!(rho > 0)) throw ArgumentError("data subproblem needs rho > 0");
  const Tensor y = y_in.to(v.dtype());
  const Tensor aty = a.adjoint(y);
  switch (a.kind()) {
    case OperatorKind::Identity:
      return scale(axpy(y, rho, v), 1.0 / (1.0 + rho));
    case OperatorKind::Mask: {
      const Tensor& mask = operator_mask(a);
      const std::size_t plane = mask.numel();
      Tensor x = axpy(aty, rho, v);
      visit_dtype(x.dtype(), [&]<typename T>() {
        auto xd = x.data<T>();
        const auto md = mask.data<double>();
        for (std::size_t i = 0; i < xd.size(); ++i) xd[i] = static_cast<T>(xd[i] / (md[i % plane] + rho));
      });
      return x;
    }
    default:
      break;
  }
  const Tensor b = axpy(aty, rho, v);
  const auto apply = [&](const Tensor& u) { return axpy(a.adjoint(a.apply(u)), rho, u); };
  CGResult r = conjugate_gradient(apply, b, v, cg);
  if (!r.converged) {
    std::ostringstream msg;
    msg << "data subproblem: CG did not converge in " << r.iterations << " iterations (residual " << r.residual
        << ", rho " << rho << ")";
    throw ConvergenceError(msg.str(), r.residual);
  }
  return std::move(r.x);
}

SolveResult pnp_admm(const Tensor& y_in, const LinearOperator& a, const Prior& prox, const ADMMConfig& cfg,
                     const Tensor& x_init, const Tensor* ground_truth) {
  cfg.validate();
  check_problem(y_in, a, x_init);
  if (!prox.capabilities().has_prox) throw UnsupportedOperation(prox.name() + " prior has no prox");
  const Tensor y = y_in.to(x_init.dtype());
  const ADMMSchedule sched = admm_schedule(cfg.sigma, cfg.s0, cfg.sN, std::max<std::size_t>(cfg.iterations, 1));
  Recorder rec{cfg.trace, ground_truth, {}, {}};
  if (prox.capabilities().has_value) {
    rec.objective = [&](const Tensor& x) { return map_objective(a, y, prox, cfg.sigma, x); };
  }
  Tensor x = x_init;
  Tensor z = x_init;
  Tensor l = x_init.zeros_like();
  double rho = sched.rho0;
  SolveResult out;
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const Tensor prev = x;
    x = solve_data_subproblem(a, y, rho, axpy(z, -1.0 / rho, l), cfg.cg);
    const double s = cfg.sigma / std::sqrt(rho);
    const Tensor u = axpy(x, 1.0 / rho, l);
    const Field field = [&](const Tensor& v) { return prior_prox(prox, v, s); };
    z = ensemble(field, u, cfg.self_ensemble, k).to(x.dtype());
    axpy_inplace(l, rho, sub(x, z));
    rho *= sched.alpha;
    if (x.has_non_finite() || z.has_non_finite()) {
      throw SolverDiverged("non-finite ADMM iterate at iteration " + std::to_string(k + 1), std::move(rec.trace));
    }
    const double mse = mean_squared_difference(x, prev);
    out.iterations = k + 1;
    rec.record(k + 1, x, mse);
    if (cfg.early_stop_mse > 0 && mse < cfg.early_stop_mse) break;
  }
  out.x = std::move(x);
  out.trace = std::move(rec.trace);
  return out;
}

SolveResult pnp_admm(const Tensor& y, const LinearOperator& a, const DenoiserNet& d, const ADMMConfig& cfg,
                     const Tensor& x_init, const Tensor* ground_truth) {
  return pnp_admm(y, a, DenoiserPrior(borrow(d)), cfg, x_init, ground_truth);
}

Tensor map_closed_form(const LinearOperator& a, const Tensor& y, const Prior& quadratic, double sigma) {
  if (!quadratic.capabilities().is_quadratic) throw UnsupportedOperation(quadratic.name() + " prior is not quadratic");
  Shape shape = a.input_shape();
  shape[0] = y.dim(0);
  const std::size_t n = shape_numel(shape);
  if (n > 4096) throw ArgumentError("map_closed_form: " + std::to_string(n) + " unknowns exceed the dense limit 4096");
  const double s2 = sigma * sigma;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Tensor e(shape, DType::F64);
  for (std::size_t i = 0; i < n; ++i) {
    e.set(i, 1.0);
    const Tensor col = axpy(a.adjoint(a.apply(e)), s2, quadratic.quadratic_apply(e));
    e.set(i, 0.0);
    for (std::size_t r = 0; r < n; ++r) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = col.item(r);
  }
  const Tensor rhs_t = a.adjoint(y.to(DType::F64));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) rhs(static_cast<Eigen::Index>(i)) = rhs_t.item(i);
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError("map_closed_form: normal matrix is not positive definite");
  const Eigen::VectorXd sol = llt.solve(rhs);
  Tensor x(shape, DType::F64);
  for (std::size_t i = 0; i < n; ++i) x.set(i, sol(static_cast<Eigen::Index>(i)));
  return x;
}

Var unrolled_loss(Tape& tape, const LinearOperator& a, ReGNet& g, Var x0, Var y, Var x_gt, const UnrolledConfig& cfg) {
  const double s2 = cfg.sigma * cfg.sigma;
  Var x = x0;
  for (std::size_t k = 0; k < cfg.unroll; ++k) {
    Var data = a.adjoint(ad::sub(a.apply(x), y));
    Var step = ad::add(data, ad::scale(g.forward(tape, x), s2));
    x = ad::sub(x, ad::scale(step, cfg.mu));
  }
  return ad::sum(ad::square(ad::sub(x, x_gt)));
}

std::vector<UnrolledLogRow> unrolled_gd_train(const PatchDataset& data, const LinearOperator& a, ReGNet& g,
                                              const UnrolledConfig& cfg,
                                              const std::function<void(const UnrolledLogRow&)>& sink) {
  cfg.validate();
  const auto& in = a.input_shape();
  if (data.patch() != in[2] || data.patch() != in[3] || data.channels() != in[1]) {
    throw DimensionError("unrolled training: operator input " + shape_str(in) + " does not match patches of size " +
                         std::to_string(data.patch()));
  }
  Rng rng(cfg.seed);
  AdamState adam;
  adam.options.lr = cfg.lr;
  auto params = g.net().parameter_ptrs();
  const DType dt = g.net().dtype();
  std::vector<UnrolledLogRow> log;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Tensor x_gt = data.sample(cfg.batch, rng);
    Tensor y = a.apply(x_gt);
    if (cfg.sigma_n > 0) {
      for (auto& v : y.data<double>()) v += cfg.sigma_n * normal(rng);
    }
    const Tensor x0 = initial_estimate(a, y);
    g.net().zero_grad();
    Tape tape;
    Var loss = unrolled_loss(tape, a, g, tape.constant(x0.to(dt)), tape.constant(y.to(dt)), tape.constant(x_gt.to(dt)),
                             cfg);
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) throw NumericError("unrolled training: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    adam_step(params, adam);
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      UnrolledLogRow row{step, lv};
      log.push_back(row);
      if (sink) sink(row);
    }
  }
  return log;
}

}  // namespace pnpreg
