#include <doctest.h>

#include "pnpreg/harness.hpp"
#include "pnpreg/solvers.hpp"
#include "support.hpp"

using namespace pnpreg;
using test::randn;

namespace {

class IdentityDenoiser final : public Prior {
 public:
  std::string name() const override { return "identity"; }
  PriorCapabilities capabilities() const override { return {false, true, false, false}; }
  Tensor prox(const Tensor& z, double) const override { return z; }
};

// Dense solve of (A^T A + c I) x = A^T y, independent of the library solvers.
Tensor dense_regularised(const LinearOperator& op, const Tensor& y, double c) {
  const Eigen::MatrixXd a = test::dense(op);
  const Eigen::MatrixXd m = a.transpose() * a + c * Eigen::MatrixXd::Identity(a.cols(), a.cols());
  return test::from_eigen(m.ldlt().solve(a.transpose() * test::to_eigen(y)), op.input_shape());
}

struct Problem {
  OperatorPtr op;
  Tensor x;
  Tensor y;
};

Problem blur_problem(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Problem p;
  p.op = build_operator(make_gaussian_kernel(n >= 16 ? 9 : 5, 1.6), 1, n, n);
  p.x = synthetic_image(1, n, n, rng);
  p.y = add_awgn(p.op->apply(p.x), 0.01, seed);
  return p;
}

}  // namespace

TEST_CASE("paper parameter blocks are the defaults") {
  const GDConfig gd;
  CHECK(gd.mu == 0.008);
  CHECK(gd.sigma * 255 == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(gd.iterations == 1500);
  const REDConfig red;
  CHECK(red.w == 0.005);
  CHECK(red.sigma_f * 255 == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(red.mu == 0.08);
  const ADMMConfig admm;
  CHECK(admm.s0 * 255 == doctest::Approx(50.0).epsilon(1e-14));
  CHECK(admm.sN * 255 == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(admm.iterations == 25);
  const UnrolledConfig u;
  CHECK(u.unroll == 6);
  CHECK(u.mu == 0.008);
  CHECK(u.sigma * 255 == doctest::Approx(1.2).epsilon(1e-14));
}

TEST_CASE("unregularised GD on the identity converges geometrically to y") {
  Rng rng(1);
  const OperatorPtr id = build_operator(IdentitySpec{}, 3, 8, 8);
  const Tensor y = randn({1, 3, 8, 8}, rng);
  GDConfig c;
  c.sigma = 0;
  c.mu = 0.5;
  c.rule = UpdateRule::Plain;
  c.iterations = 40;
  const Tensor x0({1, 3, 8, 8});
  const SolveResult r = pnp_gd(y, *id, TikhonovPrior{}, c, x0);
  CHECK(r.trace.rows.size() == 40);
  // error halves every step
  CHECK(max_abs(sub(r.x, y)) <= std::pow(0.5, 40) * max_abs(y) * (1 + 1e-9));
  for (std::size_t k = 1; k < r.trace.rows.size(); ++k) {
    CHECK(r.trace.rows[k].iterate_mse == doctest::Approx(0.25 * r.trace.rows[k - 1].iterate_mse).epsilon(1e-9));
  }
}

TEST_CASE("tikhonov PnP-GD on circular deblurring reaches the dense MAP solution") {
  const Problem p = blur_problem(32, 2);
  const double s = 0.3;
  const Tensor ref = dense_regularised(*p.op, p.y, s * s);
  GDConfig c;
  c.sigma = s;
  c.mu = 1 / (1 + s * s);
  c.rule = UpdateRule::Plain;
  c.iterations = 600;
  const SolveResult r = pnp_gd(p.y, *p.op, TikhonovPrior{}, c, p.y, &p.x);
  CHECK(relative_l2(r.x, ref) <= 1e-5);
  // objective decreases monotonically for a plain step below 1/L
  for (std::size_t k = 1; k < r.trace.rows.size(); ++k) {
    CHECK(r.trace.rows[k].objective <= r.trace.rows[k - 1].objective * (1 + 1e-13));
  }
  CHECK(std::isfinite(r.trace.rows.back().psnr));
}

TEST_CASE("self-ensemble leaves an equivariant prior unchanged") {
  const Problem p = blur_problem(16, 3);
  GDConfig c;
  c.sigma = 0.3;
  c.mu = 0.1;
  c.iterations = 30;
  const SolveResult a = pnp_gd(p.y, *p.op, LaplacianPrior{}, c, p.y);
  c.self_ensemble = true;
  const SolveResult b = pnp_gd(p.y, *p.op, LaplacianPrior{}, c, p.y);
  CHECK(max_abs(sub(a.x, b.x)) <= 1e-12);
}

TEST_CASE("RED") {
  const Problem p = blur_problem(16, 4);
  SUBCASE("identity denoiser reduces to plain data descent") {
    REDConfig r;
    r.rule = UpdateRule::Plain;
    r.mu = 0.7;
    r.iterations = 25;
    GDConfig g;
    g.rule = UpdateRule::Plain;
    g.mu = 0.7;
    g.sigma = 0;
    g.iterations = 25;
    const Tensor a = red_gd(p.y, *p.op, IdentityDenoiser{}, r, p.y).x;
    const Tensor b = pnp_gd(p.y, *p.op, TikhonovPrior{}, g, p.y).x;
    CHECK(max_abs(sub(a, b)) == 0);
  }
  SUBCASE("tikhonov denoiser reaches its fixed point") {
    REDConfig r;
    r.w = 1.0;
    r.sigma_f = 0.5;
    r.rule = UpdateRule::Plain;
    const double c = 1 - 1 / (1 + r.sigma_f * r.sigma_f);
    r.mu = 1 / (1 + r.w * c);
    r.iterations = 400;
    const Tensor ref = dense_regularised(*p.op, p.y, r.w * c);
    CHECK(relative_l2(red_gd(p.y, *p.op, TikhonovPrior{}, r, p.y).x, ref) <= 1e-6);
  }
}

TEST_CASE("ADMM schedule") {
  const ADMMSchedule flat = admm_schedule(0.1, 30.0 / 255, 30.0 / 255, 20);
  CHECK(flat.alpha == 1.0);
  const ADMMSchedule s = admm_schedule(2.55 / 255, 50.0 / 255, 0.1 / 255, 25);
  CHECK(std::abs(s.rho0 - 0.002601) <= 1e-12);
  CHECK(std::abs(s.alpha - std::pow(500.0, 2.0 / 25)) <= 1e-12);
  // the last prox runs at sN
  const double s_last = (2.55 / 255) / std::sqrt(s.rho0 * std::pow(s.alpha, 24));
  CHECK(s_last == doctest::Approx(0.1 / 255 * std::pow(500.0, 1.0 / 25)).epsilon(1e-12));
  CHECK(ADMMConfig::effective_sigma(0) == 0.001 / 255);
  CHECK(ADMMConfig::effective_sigma(2.55 / 255) == 2.55 / 255);
  CHECK_THROWS_AS(admm_schedule(0.1, 0.1, 0.2, 5), ArgumentError);
  CHECK_THROWS_AS(admm_schedule(0.1, 0.2, 0.1, 0), ArgumentError);
}

TEST_CASE("data subproblem") {
  Rng rng(5);
  SUBCASE("identity closed form") {
    const OperatorPtr id = build_operator(IdentitySpec{}, 1, 6, 6);
    const Tensor y = randn({1, 1, 6, 6}, rng), v = randn({1, 1, 6, 6}, rng);
    const double rho = 0.7;
    CHECK(max_abs(sub(solve_data_subproblem(*id, y, rho, v), scale(axpy(y, rho, v), 1 / (1 + rho)))) <= 1e-15);
  }
  SUBCASE("large rho pins x to v") {
    const Problem p = blur_problem(16, 6);
    const Tensor v = randn({1, 1, 16, 16}, rng);
    CHECK(relative_l2(solve_data_subproblem(*p.op, p.y, 1e6, v), v) <= 1e-4);
  }
  SUBCASE("CG agrees with a dense solve") {
    const Problem p = blur_problem(16, 7);
    const Tensor v = randn({1, 1, 16, 16}, rng);
    const double rho = 0.05;
    const Eigen::MatrixXd a = test::dense(*p.op);
    const Eigen::MatrixXd m = a.transpose() * a + rho * Eigen::MatrixXd::Identity(256, 256);
    const Eigen::VectorXd b = a.transpose() * test::to_eigen(p.y) + rho * test::to_eigen(v);
    const Tensor ref = test::from_eigen(m.ldlt().solve(b), v.shape());
    CHECK(max_abs(sub(solve_data_subproblem(*p.op, p.y, rho, v, CGOptions{1e-13, 1000}), ref)) <= 1e-8);
  }
  SUBCASE("mask closed form agrees with a dense solve") {
    const OperatorPtr m = build_operator(make_mask_spec(8, 8, 0.4, 2), 1, 8, 8);
    const Tensor y = randn({1, 1, 8, 8}, rng), v = randn({1, 1, 8, 8}, rng);
    const Eigen::MatrixXd a = test::dense(*m);
    const Eigen::MatrixXd mm = a.transpose() * a + 0.3 * Eigen::MatrixXd::Identity(64, 64);
    const Tensor ref = test::from_eigen(mm.ldlt().solve(a.transpose() * test::to_eigen(y) + 0.3 * test::to_eigen(v)), v.shape());
    CHECK(max_abs(sub(solve_data_subproblem(*m, y, 0.3, v), ref)) <= 1e-12);
  }
  SUBCASE("non-convergence is reported") {
    const Problem p = blur_problem(16, 8);
    CHECK_THROWS_AS(solve_data_subproblem(*p.op, p.y, 1e-3, p.y, CGOptions{1e-15, 2}), ConvergenceError);
  }
}

TEST_CASE("PnP-ADMM with the tikhonov prox") {
  const Problem p = blur_problem(24, 9);
  const double s = 0.4;
  ADMMConfig c;
  c.sigma = s;
  c.s0 = c.sN = s;  // rho = 1
  c.iterations = 300;
  c.cg = CGOptions{1e-14, 1000};
  const SolveResult r = pnp_admm(p.y, *p.op, TikhonovPrior{}, c, p.y, &p.x);
  CHECK(r.trace.rows.size() == 300);
  CHECK(relative_l2(r.x, dense_regularised(*p.op, p.y, s * s)) <= 1e-5);
  CHECK(r.trace.rows.back().iterate_mse < 1e-12);

  c.iterations = 1;
  c.s0 = c.sN = 1e-6;  // rho huge
  const SolveResult one = pnp_admm(p.y, *p.op, TikhonovPrior{}, c, p.y);
  CHECK(!one.x.has_non_finite());
  CHECK(relative_l2(one.x, p.y) <= 1e-3);
}

TEST_CASE("closed-form MAP") {
  Rng rng(10);
  const OperatorPtr id = build_operator(IdentitySpec{}, 1, 6, 6);
  const Tensor y = randn({1, 1, 6, 6}, rng);
  CHECK(max_abs(sub(map_closed_form(*id, y, TikhonovPrior{}, 0.5), scale(y, 1 / 1.25))) <= 1e-14);

  const Problem p = blur_problem(16, 11);
  const double s = 0.2;
  const Tensor x = map_closed_form(*p.op, p.y, LaplacianPrior{}, s);
  // normal-equation residual
  const Tensor res = sub(axpy(p.op->adjoint(p.op->apply(x)), s * s, laplacian(laplacian(x))), p.op->adjoint(p.y));
  CHECK(std::sqrt(squared_norm(res)) <= 1e-10);
  CHECK_THROWS_AS(map_closed_form(*p.op, p.y, IdentityDenoiser{}, s), UnsupportedOperation);

  // long plain GD on an 8x8 instance
  const Problem q = blur_problem(8, 12);
  Tensor g = q.y;
  const double mu = 0.9;
  for (int k = 0; k < 100000; ++k) {
    axpy_inplace(g, -mu, add(q.op->adjoint(sub(q.op->apply(g), q.y)), scale(g, 0.04)));
  }
  CHECK(max_abs(sub(map_closed_form(*q.op, q.y, TikhonovPrior{}, 0.2), g)) <= 1e-6);
}

TEST_CASE("divergence is reported with the partial trace") {
  const Problem p = blur_problem(16, 13);
  GDConfig c;
  c.sigma = 1.0;
  c.mu = 50;
  c.rule = UpdateRule::Plain;
  c.iterations = 5000;
  try {
    pnp_gd(p.y, *p.op, LaplacianPrior{}, c, p.y);
    FAIL("expected divergence");
  } catch (const SolverDiverged& e) {
    CHECK(!e.trace().rows.empty());
    CHECK(e.trace().rows.size() < 5000);
  }
}

TEST_CASE("argument checks") {
  const Problem p = blur_problem(16, 14);
  GDConfig c;
  c.mu = -1;
  CHECK_THROWS_AS(pnp_gd(p.y, *p.op, TikhonovPrior{}, c, p.y), ArgumentError);
  CHECK_THROWS_AS(pnp_gd(p.y, *p.op, TikhonovPrior{}, GDConfig{}, Tensor({1, 1, 8, 8})), DimensionError);
  CHECK_THROWS_AS(pnp_gd(p.y, *p.op, IdentityDenoiser{}, GDConfig{}, p.y), UnsupportedOperation);
}

TEST_CASE("trace CSV") {
  SolveTrace t;
  t.rows.push_back({1, 20.5, 1e-3, std::numeric_limits<double>::quiet_NaN()});
  t.rows.push_back({2, 21.0, 5e-4, 3.0});
  const std::string csv = t.to_csv();
  CHECK(csv.rfind("iter,psnr,iterate_mse,objective\n", 0) == 0);
  CHECK(csv.find("1,20.5,0.001,\n") != std::string::npos);
}

TEST_CASE("unrolled GD") {
  Rng rng(15);
  const OperatorPtr op = build_operator(make_sr_spec(SRKernel::Bicubic, 2), 1, 8, 8);
  const Tensor x_gt = test::randu({1, 1, 8, 8}, rng);
  const Tensor y = op->apply(x_gt);
  const Tensor x0 = initial_estimate(*op, y);

  SUBCASE("N = 0 returns the initial error and no gradient") {
    ReGNet g(1, 1, 2, 1, 3, DType::F64);
    UnrolledConfig c;
    c.unroll = 0;
    g.net().zero_grad();
    Tape t;
    const Var l = unrolled_loss(t, *op, g, t.constant(x0), t.constant(y), t.constant(x_gt), c);
    CHECK(l.value().item() == doctest::Approx(squared_norm(sub(x0, x_gt))).epsilon(1e-14));
    t.backward(l);
    for (const auto& p : g.net().parameters()) CHECK(max_abs(p.grad) == 0);
  }
  SUBCASE("3-step gradient matches finite differences") {
    ReGNet g(1, 1, 1, 1, 4, DType::F64);
    UnrolledConfig c;
    c.unroll = 3;
    c.mu = 0.5;
    c.sigma = 0.7;
    const auto loss = [&](bool track) {
      Tape t;
      const Var l = unrolled_loss(t, *op, g, t.constant(x0), t.constant(y), t.constant(x_gt), c);
      if (track) t.backward(l);
      return l.value().item();
    };
    g.net().zero_grad();
    loss(true);
    double worst = 0;
    for (auto& p : g.net().parameters()) {
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double v = p.value.item(i);
        p.value.set(i, v + 1e-6);
        const double up = loss(false);
        p.value.set(i, v - 1e-6);
        const double dn = loss(false);
        p.value.set(i, v);
        const double fd = (up - dn) / 2e-6;
        worst = std::max(worst, std::abs(fd - p.grad.item(i)) / std::max(1.0, std::abs(fd)));
      }
    }
    CHECK(worst <= 1e-5);
  }
  SUBCASE("training lowers the loss") {
    const PatchDataset data = PatchDataset::synthetic(4, 32, 1, 8, 5);
    ReGNet g(1, 1, 4, 1, 6);
    UnrolledConfig c;
    c.mu = 0.5;
    c.sigma = 0.5;
    c.steps = 150;
    c.lr = 3e-3;
    c.batch = 4;
    c.log_every = 1;
    const auto log = unrolled_gd_train(data, *op, g, c);
    double head = 0, tail = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      head += log[i].loss;
      tail += log[log.size() - 1 - i].loss;
    }
    CHECK(tail < head);
    CHECK_THROWS_AS(unrolled_gd_train(PatchDataset::synthetic(2, 32, 1, 16, 5), *op, g, c), DimensionError);
  }
}
