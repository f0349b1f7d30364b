#include <doctest.h>

#include <numbers>

#include "pnpreg/adam.hpp"
#include "pnpreg/training.hpp"
#include "support.hpp"

using namespace pnpreg;
using test::randn;

namespace {

TrainConfig small_config(std::size_t steps, double lr) {
  TrainConfig c;
  c.batch = 4;
  c.patch = 24;
  c.max_steps = steps;
  c.lr0 = lr;
  c.lr_period = 1000;
  c.lr_floor = lr / 10;
  c.seed = 5;
  c.log_every = 10;
  return c;
}

const PatchDataset& toy_data() {
  static const PatchDataset data = PatchDataset::synthetic(8, 64, 3, 24, 77);
  return data;
}

// One short pretrain + joint run shared by the training-effect tests.
struct ToyRun {
  DenoiserNet d_init{3, 2, 8, 1, 1};
  ReGNet g_init{3, 2, 8, 1, 2};
  DenoiserNet d_pre{3, 2, 8, 1, 1};
  DenoiserNet d{3, 2, 8, 1, 1};
  ReGNet g{3, 2, 8, 1, 2};
  std::vector<HeldOutItem> heldout;

  ToyRun() {
    heldout = make_heldout(toy_data(), small_config(1, 1e-3), 4, 999);
    pretrain_denoiser(d_pre, toy_data(), small_config(300, 1e-3));
    d = d_pre;
    joint_train(d, g, toy_data(), small_config(200, 1e-3));
  }
};

const ToyRun& toy_run() {
  static const ToyRun run;
  return run;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.lr0 = 1e-4;
  c.lr_period = 5000;
  c.lr_floor = 1e-5;
  CHECK(learning_rate(c, 0) == 1e-4);
  CHECK(learning_rate(c, 4999) == 1e-4);
  CHECK(learning_rate(c, 5000) == 5e-5);
  CHECK(learning_rate(c, 10000) == 2.5e-5);
  CHECK(learning_rate(c, 15000) == 1.25e-5);
  CHECK(learning_rate(c, 20000) == 1e-5);
  CHECK(learning_rate(c, 1000000000) == 1e-5);
}

TEST_CASE("defaults") {
  const TrainConfig c;
  CHECK(c.lambda == 0.004);
  CHECK(c.alternation == 0.5);
  CHECK(c.sigma_max == 50.0 / 255.0);
}

TEST_CASE("sigma sampling") {
  TrainConfig c;
  Rng rng(1);
  c.alternation = 1.0;
  for (int i = 0; i < 1000; ++i) {
    const SigmaDraw s = sample_sigmas(c, rng);
    CHECK(s.delta);
    CHECK(s.sigma == s.sigma0);
  }
  c.alternation = 0.5;
  std::size_t hits = 0;
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    const SigmaDraw s = sample_sigmas(c, rng);
    hits += s.delta ? 1 : 0;
    if (s.sigma < 0 || s.sigma > c.sigma_max || s.sigma0 < 0 || s.sigma0 > c.sigma_max) FAIL("sigma out of range");
  }
  CHECK(std::abs(static_cast<double>(hits) / n - 0.5) <= 0.01);
}

TEST_CASE("L_D") {
  Rng rng(2);
  const Tensor x0 = test::randu({1, 1, 400, 250}, rng);
  Tape t;
  CHECK(loss_LD(t.constant(x0), t.constant(x0)).value().item() == 0);
  const double s0 = 0.1;
  const Tensor z = axpy(x0, s0, randn(x0.shape(), rng));
  // identity denoiser: E|eta| = s0 sqrt(2 / pi)
  const double ld = loss_LD(t.constant(z), t.constant(x0)).value().item();
  CHECK(std::abs(ld - s0 * std::sqrt(2 / std::numbers::pi)) <= 0.02 * s0 * std::sqrt(2 / std::numbers::pi));
  for (int k = 0; k < 20; ++k) {
    CHECK(loss_LD(t.constant(randn({1, 1, 3, 3}, rng)), t.constant(randn({1, 1, 3, 3}, rng))).value().item() >= 0);
  }
}

TEST_CASE("L_G") {
  Rng rng(3);
  const Tensor z = randn({1, 3, 8, 8}, rng);
  Tape t;
  SUBCASE("tikhonov pair gives zero") {
    for (double s : {0.05, 0.2, 0.5}) {
      const Tensor d = scale(z, 1 / (1 + s * s));
      CHECK(residual_identity_loss(t.constant(d), t.constant(d), t.constant(z), s).value().item() <= 1e-30);
    }
  }
  SUBCASE("sigma 0 ignores G") {
    const Tensor d = randn(z.shape(), rng);
    const double want = mean_squared_difference(z, d);
    for (int k = 0; k < 3; ++k) {
      const double got = residual_identity_loss(t.constant(randn(z.shape(), rng)), t.constant(d), t.constant(z), 0.0).value().item();
      CHECK(std::abs(got - want) <= 1e-14);
    }
  }
  SUBCASE("two-parameter toy G matches finite differences") {
    // G(d) = p0 d + p1 relu(d), D(z) = z / 2 fixed
    const Tensor zt = randn({1, 1, 5, 5}, rng);
    const auto loss = [&](Tape& tp, Var p) {
      const Var d = tp.constant(scale(zt, 0.5));
      const Var g = ad::add(ad::mul(ad::slice_channels(p, 0, 1), d), ad::mul(ad::slice_channels(p, 1, 2), ad::relu(d)));
      return residual_identity_loss(g, d, tp.constant(zt), 0.3);
    };
    CHECK(test::gradcheck(Tensor::from_values({1, 2, 1, 1}, {0.7, -1.3}), loss) <= 1e-5);
    // and L_D through a toy D(z) = a z + b relu(z)
    const Tensor x0 = randn({1, 1, 5, 5}, rng);
    CHECK(test::gradcheck(Tensor::from_values({1, 2, 1, 1}, {0.8, 0.1}), [&](Tape& tp, Var p) {
            const Var zz = tp.constant(zt);
            const Var d = ad::add(ad::mul(ad::slice_channels(p, 0, 1), zz), ad::mul(ad::slice_channels(p, 1, 2), ad::relu(zz)));
            return loss_LD(d, tp.constant(x0));
          }) <= 1e-5);
  }
  SUBCASE("G trained against the tikhonov prox reaches ~0") {
    // G(x) = a x; a = 1 is the exact Tikhonov gradient, where L_G vanishes
    const double s = 0.2;
    const Tensor d = scale(z, 1 / (1 + s * s));
    Tensor a = Tensor::from_values({1, 1, 1, 1}, {0.1});
    AdamState adam(AdamOptions{0.05});
    double first = 0, last = 0;
    for (int k = 0; k < 300; ++k) {
      Tape tp;
      const Var av = tp.leaf(a);
      const Var l = residual_identity_loss(ad::mul(av, tp.constant(d)), tp.constant(d), tp.constant(z), s);
      tp.backward(l);
      const Tensor g = tp.grad(av);
      Tensor* ps[] = {&a};
      const Tensor* gs[] = {&g};
      adam_step(ps, gs, adam);
      (k == 0 ? first : last) = l.value().item();
    }
    CHECK(last <= 1e-8 * first);
  }
}

TEST_CASE("total loss") {
  CHECK(loss_total(1.0, 2.0, true, 0.004) == doctest::Approx(1.008).epsilon(1e-15));
  CHECK(loss_total(3.0, 2.0, false, 0.004) == 0.004 * 2.0);
  Tape t;
  const Var ld = t.constant(Tensor::scalar(3.0)), lg = t.constant(Tensor::scalar(2.0));
  CHECK(loss_total(ld, lg, false, 0.004).value().item() == 0.008);
  CHECK(loss_total(ld, lg, true, 0.004).value().item() == doctest::Approx(3.008).epsilon(1e-15));
}

TEST_CASE("patch dataset") {
  const PatchDataset& data = toy_data();
  Rng a(4), b(4);
  const Tensor x = data.sample(6, a);
  CHECK(x.shape() == Shape{6, 3, 24, 24});
  CHECK(x.dtype() == DType::F64);
  CHECK(max_abs(sub(x, data.sample(6, b))) == 0);
  CHECK(max_abs(x) <= 1.0);
  CHECK_THROWS_AS(PatchDataset({Tensor({1, 3, 10, 10})}, 24), DimensionError);
  CHECK_THROWS(PatchDataset::load_folder("/nonexistent/folder"));
}

TEST_CASE("heldout set is fixed by its seed") {
  const auto a = make_heldout(toy_data(), small_config(1, 1e-3), 2, 10);
  const auto b = make_heldout(toy_data(), small_config(1, 1e-3), 2, 10);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(max_abs(sub(a[i].noisy(), b[i].noisy())) == 0);
    CHECK(a[i].draw.sigma == b[i].draw.sigma);
  }
}

TEST_CASE("training is deterministic") {
  const auto run = [] {
    DenoiserNet d(3, 2, 4, 1, 1);
    ReGNet g(3, 2, 4, 1, 2);
    const TrainResult r = joint_train(d, g, toy_data(), small_config(15, 1e-3));
    return r.log.back();
  };
  const TrainLogRow a = run(), b = run();
  CHECK(a.l == b.l);
  CHECK(a.ld == b.ld);
  CHECK(a.lg == b.lg);
}

TEST_CASE("non-finite training aborts and dumps the weights") {
  const auto dir = std::filesystem::temp_directory_path() / "pnpreg_nan_dump";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  DenoiserNet d(3, 2, 4, 1, 1);
  TrainConfig c = small_config(50, 1e30);
  c.lr_floor = 1e30;
  c.dump_dir = dir;
  CHECK_THROWS_AS(pretrain_denoiser(d, toy_data(), c), NumericError);
  CHECK(std::filesystem::exists(dir / "denoiser_nan.pnpr"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("frozen denoiser stays fixed") {
  DenoiserNet d(3, 2, 4, 1, 1);
  const DenoiserNet before = d;
  ReGNet g(3, 2, 4, 1, 2);
  TrainConfig c = small_config(5, 1e-3);
  c.freeze_denoiser = true;
  joint_train(d, g, toy_data(), c);
  for (std::size_t i = 0; i < d.net().parameters().size(); ++i) {
    CHECK(max_abs(sub(d.net().parameters()[i].value, before.net().parameters()[i].value)) == 0);
  }
}

TEST_CASE("toy training run") {
  const ToyRun& r = toy_run();
  const double lambda = 0.004;
  const HeldOutMetrics init = evaluate_heldout(r.d_init, r.g_init, r.heldout, lambda);
  const HeldOutMetrics pre = evaluate_heldout(r.d_pre, r.g_init, r.heldout, lambda);
  const HeldOutMetrics fin = evaluate_heldout(r.d, r.g, r.heldout, lambda);
  MESSAGE("held-out L: init " << init.l << " pretrained " << pre.l << " joint " << fin.l);

  const auto [den, noisy] = denoising_mse(r.d_pre, r.heldout);
  CHECK(den < noisy);
  CHECK(fin.l < 0.5 * init.l);
  CHECK(fin.lg < init.lg);

  // sigma0 = 0: the ideal denoiser is the identity
  double mse_init = 0, mse_fin = 0;
  for (const auto& item : r.heldout) {
    mse_init += mean_squared_difference(r.d_init.denoise(item.x0, 0.0), item.x0);
    mse_fin += mean_squared_difference(r.d.denoise(item.x0, 0.0), item.x0);
  }
  CHECK(mse_fin < mse_init);
}
