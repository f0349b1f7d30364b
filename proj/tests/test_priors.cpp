#include <doctest.h>

#include "pnpreg/io.hpp"
#include "pnpreg/priors.hpp"
#include "support.hpp"

using namespace pnpreg;
using test::randn;
using Rng = std::mt19937_64;

namespace {

// I + s^2 L^T L for the circular 5-point Laplacian on an h x w grid.
Eigen::MatrixXd laplacian_system(std::size_t h, std::size_t w, double s) {
  const auto n = static_cast<Eigen::Index>(h * w);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto p = static_cast<Eigen::Index>(i * w + j);
      l(p, p) += 4;
      l(p, static_cast<Eigen::Index>(((i + 1) % h) * w + j)) -= 1;
      l(p, static_cast<Eigen::Index>(((i + h - 1) % h) * w + j)) -= 1;
      l(p, static_cast<Eigen::Index>(i * w + (j + 1) % w)) -= 1;
      l(p, static_cast<Eigen::Index>(i * w + (j + w - 1) % w)) -= 1;
    }
  }
  return Eigen::MatrixXd::Identity(n, n) + s * s * l.transpose() * l;
}

class IdentityDenoiser final : public Prior {
 public:
  std::string name() const override { return "identity"; }
  PriorCapabilities capabilities() const override { return {false, true, false, false}; }
  Tensor prox(const Tensor& z, double) const override { return z; }
};

}  // namespace

TEST_CASE("tikhonov closed forms") {
  const TikhonovPrior tik;
  const Tensor z = Tensor::full({1, 1, 1, 1}, 1.5);
  const Tensor p = prior_prox(tik, z, 1.0);
  CHECK(p.item(0) == 0.75);
  CHECK(prior_grad(tik, p).item(0) == 0.75);
  CHECK(1.0 * 0.75 == 1.5 - 0.75);
  CHECK(prior_value(tik, z) == 1.125);
}

TEST_CASE("prox at sigma 0 is the identity for every prior") {
  Rng rng(1);
  const Tensor z = randn({1, 3, 8, 8}, rng);
  const TikhonovPrior tik;
  const LaplacianPrior lap;
  const IdentityDenoiser idd;
  const DenoiserPrior den(std::make_shared<const DenoiserNet>(3, 2, 4, 1, 3));
  for (const Prior* p : std::initializer_list<const Prior*>{&tik, &lap, &idd, &den}) {
    CHECK(max_abs(sub(prior_prox(*p, z, 0.0), z)) == 0);
    CHECK_THROWS_AS(prior_prox(*p, z, -0.1), ArgumentError);
  }
  CHECK_THROWS_AS(prior_grad(den, z), UnsupportedOperation);
  CHECK_THROWS_AS(prior_value(den, z), UnsupportedOperation);
  const LearnedGradientPrior reg(std::make_shared<const ReGNet>(3, 2, 4, 1, 4));
  CHECK_THROWS_AS(prior_prox(reg, z, 0.1), UnsupportedOperation);
}

TEST_CASE("laplacian prox matches a dense solve") {
  Rng rng(2);
  const LaplacianPrior lap(CGOptions{1e-14, 1000});
  for (double s : {0.1, 0.7, 2.0}) {
    const Tensor z = randn({1, 1, 8, 8}, rng);
    const Eigen::VectorXd ref = laplacian_system(8, 8, s).ldlt().solve(test::to_eigen(z));
    const Tensor p = prior_prox(lap, z, s);
    CHECK((test::to_eigen(p) - ref).lpNorm<Eigen::Infinity>() <= 1e-8);
  }
  // laplacian() itself against the explicit stencil
  const Tensor x = randn({1, 2, 5, 7}, rng);
  const Tensor lx = laplacian(x);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 7; ++j) {
        const auto at = [&](std::size_t a, std::size_t b) { return x.item((c * 5 + a % 5) * 7 + b % 7); };
        const double ref = 4 * at(i, j) - at(i + 1, j) - at(i + 4, j) - at(i, j + 1) - at(i, j + 6);
        CHECK(std::abs(lx.item((c * 5 + i) * 7 + j) - ref) <= 1e-12);
      }
    }
  }
}

TEST_CASE("residual identity error") {
  Rng rng(3);
  const TikhonovPrior tik;
  const LaplacianPrior lap(CGOptions{1e-14, 1000});
  for (double s : {0.01, 0.05, 0.1, 0.15, 0.2}) {
    const Tensor z = randn({1, 3, 8, 8}, rng);
    CHECK(residual_identity_error(tik, tik, z, s) <= 1e-28);
    CHECK(residual_identity_error(lap, lap, z, s) <= 1e-24);
  }
  const ReGNet g(3, 2, 4, 1, 5);
  const DenoiserNet d(3, 2, 4, 1, 6);
  CHECK(residual_identity_error(g, d, test::randu({1, 3, 16, 16}, rng), 0.1) > 0);
  CHECK_THROWS_AS(residual_identity_error(tik, tik, randn({1, 1, 4, 4}, rng), 0.0), ArgumentError);
}

TEST_CASE("jacobian asymmetry") {
  Rng rng(4);
  const Tensor x = randn({1, 1, 5, 5}, rng);
  CHECK(jacobian_asymmetry(TikhonovPrior{}, x) <= 1e-8);
  CHECK(jacobian_asymmetry(LaplacianPrior{}, x) <= 1e-8);
  const LearnedGradientPrior reg(std::make_shared<const ReGNet>(1, 1, 4, 1, 9, DType::F64));
  CHECK(jacobian_asymmetry(reg, x) > 1e-3);
}

TEST_CASE("bias-free networks") {
  Rng rng(5);
  const DenoiserNet d(3, 2, 4, 1, 7, DType::F64);
  CHECK(max_abs(d.denoise(Tensor({1, 3, 12, 12}), 0.0)) == 0);
  const Tensor z = test::randu({1, 3, 12, 12}, rng);
  for (double alpha : {0.5, 2.0, 3.7}) {
    const double s = 0.05;
    const Tensor lhs = d.denoise(scale(z, alpha), alpha * s);
    const Tensor rhs = scale(d.denoise(z, s), alpha);
    CHECK(relative_l2(lhs, rhs) <= 1e-6);
  }

  const ReGNet g(3, 3, 4, 2, 8);
  CHECK(max_abs(g.reg_grad(Tensor({1, 3, 17, 23}))) == 0);
  const Tensor out = g.reg_grad(test::randu({1, 3, 17, 23}, rng));
  CHECK(out.shape() == Shape{1, 3, 17, 23});
  CHECK(!out.has_non_finite());
  CHECK(d.denoise(test::randu({2, 3, 17, 23}, rng), 0.1).shape() == Shape{2, 3, 17, 23});
}

TEST_CASE("network initialisation is seeded") {
  const ReGNet a(3, 2, 4, 1, 11), b(3, 2, 4, 1, 11), c(3, 2, 4, 1, 12);
  const auto& pa = a.net().parameters();
  const auto& pb = b.net().parameters();
  const auto& pc = c.net().parameters();
  REQUIRE(pa.size() == pb.size());
  double diff_same = 0, diff_other = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    diff_same += max_abs(sub(pa[i].value, pb[i].value));
    diff_other += max_abs(sub(pa[i].value, pc[i].value));
  }
  CHECK(diff_same == 0);
  CHECK(diff_other > 0);
}

TEST_CASE("sigma outside the trained range is clamped") {
  Rng rng(6);
  const DenoiserNet d(1, 1, 4, 1, 3, DType::F64);
  const Tensor z = test::randu({1, 1, 8, 8}, rng);
  CHECK(max_abs(sub(d.denoise(z, 1.0), d.denoise(z, DenoiserNet::kSigmaMax))) == 0);
}

TEST_CASE("network forward gradient matches finite differences") {
  Rng rng(7);
  DenoiserNet d(1, 2, 2, 1, 4, DType::F64);
  const Tensor z = test::randu({1, 1, 6, 6}, rng);
  const Tensor r = randn({1, 1, 6, 6}, rng);
  CHECK(test::gradcheck(z, [&](Tape& t, Var v) { return ad::sum(ad::mul(d.forward_frozen(t, v, 0.1), t.constant(r))); }) <= 1e-5);

  // parameters: perturb each weight of one layer
  Parameter& p = d.net().parameters().front();
  const auto loss = [&] {
    Tape t;
    return ad::sum(ad::mul(d.forward(t, t.constant(z), 0.1, false), t.constant(r))).value().item();
  };
  d.net().zero_grad();
  {
    Tape t;
    t.backward(ad::sum(ad::mul(d.forward(t, t.constant(z), 0.1, true), t.constant(r))));
  }
  const Tensor g = p.grad;
  double worst = 0;
  for (std::size_t i = 0; i < p.value.numel(); ++i) {
    const double v = p.value.item(i);
    p.value.set(i, v + 1e-6);
    const double up = loss();
    p.value.set(i, v - 1e-6);
    const double dn = loss();
    p.value.set(i, v);
    const double fd = (up - dn) / 2e-6;
    worst = std::max(worst, std::abs(fd - g.item(i)) / std::max(1.0, std::abs(fd)));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("checkpoint round trip and malformed input") {
  Rng rng(8);
  const DenoiserNet d(3, 2, 4, 1, 9);
  const auto bytes = encode_checkpoint(d.net(), 123);
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.step == 123);
  CHECK(back.net->architecture() == d.net().architecture());
  const Tensor z = test::randu({1, 3, 10, 10}, rng);
  CHECK(max_abs(sub(DenoiserNet(*back.net).denoise(z, 0.1), d.denoise(z, 0.1))) == 0);

  for (std::size_t n = 0; n < bytes.size(); n += 7) {
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes.data(), n)), ParseError);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(extra), ParseError);
  auto bad = bytes;
  bad[1] = 'Q';
  CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);

  const auto path = std::filesystem::temp_directory_path() / "pnpreg_ckpt_test.pnpr";
  save_checkpoint(path, d.net(), 5);
  CHECK(load_checkpoint(path).step == 5);
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
