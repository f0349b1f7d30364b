#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <limits>
#include <vector>

#include "pnpreg/adam.hpp"
#include "pnpreg/degradations.hpp"
#include "pnpreg/linalg.hpp"
#include "pnpreg/priors.hpp"
#include "pnpreg/training.hpp"

namespace pnpreg {

enum class UpdateRule { Plain, Adam };

struct TraceRow {
  std::size_t iter = 0;
  double psnr = std::numeric_limits<double>::quiet_NaN();       // NaN without ground truth
  double iterate_mse = 0;                                         // mean (x_{k+1} - x_k)^2
  double objective = std::numeric_limits<double>::quiet_NaN();  // NaN unless phi has a value
};

struct SolveTrace {
  std::vector<TraceRow> rows;

  std::string to_csv() const;
};

struct SolveResult {
  Tensor x;
  SolveTrace trace;
  std::size_t iterations = 0;
};

// Thrown when an iterate turns non-finite; carries the trace up to that point.
class SolverDiverged : public NumericError {
 public:
  SolverDiverged(const std::string& what, SolveTrace trace) : NumericError(what), trace_(std::move(trace)) {}
  const SolveTrace& trace() const noexcept { return trace_; }

 private:
  SolveTrace trace_;
};

struct GDConfig {
  double mu = 0.008;
  double sigma = 1.2 / 255.0;
  std::size_t iterations = 1500;
  UpdateRule rule = UpdateRule::Adam;
  bool self_ensemble = false;  // cycle the 8 dihedral transforms around grad phi, one per iteration
  bool trace = true;
  double early_stop_mse = 0;  // stop once iterate MSE < this (0 disables)
  AdamOptions adam;

  void validate() const;
};

struct REDConfig {
  double w = 0.005;
  double sigma_f = 7.0 / 255.0;
  double mu = 0.08;
  std::size_t iterations = 1500;
  UpdateRule rule = UpdateRule::Adam;
  bool self_ensemble = false;
  bool trace = true;
  double early_stop_mse = 0;
  AdamOptions adam;

  void validate() const;
};

struct ADMMSchedule {
  double rho0 = 1;
  double alpha = 1;
};

// rho0 = (sigma / s0)^2, alpha = (s0 / sN)^(2 / N)
ADMMSchedule admm_schedule(double sigma, double s0, double sN, std::size_t iterations);

struct ADMMConfig {
  double sigma = 0.001 / 255.0;
  double s0 = 50.0 / 255.0;
  double sN = 0.1 / 255.0;
  std::size_t iterations = 25;
  bool self_ensemble = false;
  bool trace = true;
  double early_stop_mse = 0;
  CGOptions cg;

  // sigma = max(sigma_n, 0.001/255)
  static double effective_sigma(double sigma_n);
  void validate() const;
};

// x_{k+1} = x_k - mu [A^T (A x_k - y) + sigma^2 grad_phi(x_k)]; the Adam rule
// feeds the bracket to Adam with learning rate mu.
SolveResult pnp_gd(const Tensor& y, const LinearOperator& a, const Prior& gradient, const GDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth = nullptr);
SolveResult pnp_gd(const Tensor& y, const LinearOperator& a, const ReGNet& g, const GDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth = nullptr);

// x_{k+1} = x_k - mu [A^T (A x_k - y) + w (x_k - D_{sigma_f}(x_k))]
SolveResult red_gd(const Tensor& y, const LinearOperator& a, const Prior& denoiser, const REDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth = nullptr);
SolveResult red_gd(const Tensor& y, const LinearOperator& a, const DenoiserNet& d, const REDConfig& cfg,
                   const Tensor& x_init, const Tensor* ground_truth = nullptr);

// Solves (A^T A + rho I) x = A^T y + rho v. Identity and mask operators use
// the diagonal closed form, everything else CG (throws ConvergenceError).
Tensor solve_data_subproblem(const LinearOperator& a, const Tensor& y, double rho, const Tensor& v,
                             const CGOptions& cg = {});

SolveResult pnp_admm(const Tensor& y, const LinearOperator& a, const Prior& prox, const ADMMConfig& cfg,
                     const Tensor& x_init, const Tensor* ground_truth = nullptr);
SolveResult pnp_admm(const Tensor& y, const LinearOperator& a, const DenoiserNet& d, const ADMMConfig& cfg,
                     const Tensor& x_init, const Tensor* ground_truth = nullptr);

// Dense solve of (A^T A + sigma^2 Q) x = A^T y for a quadratic prior.
// Limited to 4096 unknowns.
Tensor map_closed_form(const LinearOperator& a, const Tensor& y, const Prior& quadratic, double sigma);

// 1/2 ||A x - y||^2 + sigma^2 phi(x)
double map_objective(const LinearOperator& a, const Tensor& y, const Prior& prior, double sigma, const Tensor& x);

struct UnrolledConfig {
  std::size_t unroll = 6;
  double mu = 0.008;
  double sigma = 1.2 / 255.0;
  double sigma_n = 0.0;
  std::size_t batch = 4;
  std::size_t steps = 1000;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  std::size_t log_every = 10;

  void validate() const;
};

struct UnrolledLogRow {
  std::size_t step = 0;
  double loss = 0;
};

// One differentiable unrolled run: x_N after N plain GD steps from x0, and
// the loss ||x_N - x_gt||^2 (sum of squares).
Var unrolled_loss(Tape& tape, const LinearOperator& a, ReGNet& g, Var x0, Var y, Var x_gt, const UnrolledConfig& cfg);

// End-to-end training of G through `unroll` GD steps on patches of `data`
// degraded by `a` (whose input shape fixes the patch size).
std::vector<UnrolledLogRow> unrolled_gd_train(const PatchDataset& data, const LinearOperator& a, ReGNet& g,
                                              const UnrolledConfig& cfg,
                                              const std::function<void(const UnrolledLogRow&)>& sink = {});

}  // namespace pnpreg
