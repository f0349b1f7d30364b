#include <doctest.h>

#include <numbers>

#include "pnpreg/io.hpp"
#include "pnpreg/kernels.hpp"
#include "support.hpp"

using namespace pnpreg;
using test::randn;
using Rng = std::mt19937_64;

namespace {

// Keys cubic, a = -0.5, written out independently of the library.
double keys(double x) {
  x = std::abs(x);
  if (x <= 1) return 1.5 * x * x * x - 2.5 * x * x + 1;
  if (x < 2) return -0.5 * x * x * x + 2.5 * x * x - 4 * x + 2;
  return 0;
}

std::vector<OperatorPtr> all_operators(std::size_t c, std::size_t h, std::size_t w) {
  return {build_operator(IdentitySpec{}, c, h, w),
          build_operator(make_gaussian_kernel(9, 1.6), c, h, w),
          build_operator(make_anisotropic_gaussian_kernel(7, 2.0, 0.7, 0.4), c, h, w),
          build_operator(make_sr_spec(SRKernel::Bicubic, 2), c, h, w),
          build_operator(make_sr_spec(SRKernel::Bicubic, 3), c, h, w),
          build_operator(make_sr_spec(SRKernel::Gaussian, 2), c, h, w),
          build_operator(make_sr_spec(SRKernel::Gaussian, 3), c, h, w),
          build_operator(make_mask_spec(h, w, 0.3, 11), c, h, w)};
}

}  // namespace

TEST_CASE("gaussian kernel") {
  const Tensor one = make_gaussian_kernel(1, 1.6).kernel;
  CHECK(one.shape() == Shape{1, 1});
  CHECK(one.item(0) == 1.0);

  const Tensor k = make_gaussian_kernel(25, 1.6).kernel;
  CHECK(k.shape() == Shape{25, 25});
  CHECK(std::abs(sum(k) - 1.0) <= 1e-12);
  for (std::size_t i = 0; i < 25; ++i) {
    for (std::size_t j = 0; j < 25; ++j) CHECK(k.item(i * 25 + j) == doctest::Approx(k.item((24 - i) * 25 + 24 - j)).epsilon(1e-15));
  }
  double z = 0;
  for (int i = -12; i <= 12; ++i) {
    for (int j = -12; j <= 12; ++j) z += std::exp(-(i * i + j * j) / (2 * 1.6 * 1.6));
  }
  CHECK(std::abs(k.item(12 * 25 + 12) - 1.0 / z) <= 1e-14);

  CHECK_THROWS_AS(make_gaussian_kernel(4, 1.0), ArgumentError);
  CHECK_THROWS_AS(make_gaussian_kernel(5, 0.0), ArgumentError);
}

TEST_CASE("bicubic kernel and the SR operator") {
  for (int t : {2, 3}) {
    const Tensor k = make_bicubic_kernel(t);
    const std::size_t n = static_cast<std::size_t>(4 * t - 1);
    CHECK(k.shape() == Shape{n, n});
    CHECK(std::abs(sum(k) - 1.0) <= 1e-12);
    // each row is a scaled copy of the 1-D taps, which sum to 1
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < n; ++j) row += k.item(i * n + j);
      CHECK(std::abs(row - keys((static_cast<double>(i) - (2 * t - 1)) / t) / t) <= 1e-12);
    }

    const OperatorPtr op = build_operator(make_sr_spec(SRKernel::Bicubic, t), 1, 12, 18);
    const Tensor flat = op->apply(Tensor::full({1, 1, 12, 18}, 0.37));
    CHECK(flat.shape() == Shape{1, 1, static_cast<std::size_t>(12 / t), static_cast<std::size_t>(18 / t)});
    CHECK(max_abs(sub(flat, Tensor::full(flat.shape(), 0.37))) <= 1e-12);

    // reference resampler on a ramp: direct circular sum around the kept pixel
    const std::size_t h = 12, w = 18;
    Tensor ramp({1, 1, h, w});
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) ramp.set(i * w + j, 0.03 * i + 0.05 * j);
    }
    const Tensor y = op->apply(ramp);
    const int r = 2 * t - 1;
    for (std::size_t i = 0; i < h / t; ++i) {
      for (std::size_t j = 0; j < w / t; ++j) {
        double acc = 0;
        for (int a = -r; a <= r; ++a) {
          for (int b = -r; b <= r; ++b) {
            const auto ii = static_cast<std::size_t>((static_cast<int>(i) * t + a + 10 * static_cast<int>(h)) % static_cast<int>(h));
            const auto jj = static_cast<std::size_t>((static_cast<int>(j) * t + b + 10 * static_cast<int>(w)) % static_cast<int>(w));
            acc += keys(static_cast<double>(a) / t) / t * keys(static_cast<double>(b) / t) / t * ramp.item(ii * w + jj);
          }
        }
        CHECK(std::abs(y.item(i * (w / t) + j) - acc) <= 1e-6);
      }
    }
  }
  CHECK_THROWS_AS(make_bicubic_kernel(4), ArgumentError);
  CHECK_THROWS_AS(build_operator(make_sr_spec(SRKernel::Bicubic, 2), 1, 13, 12), DimensionError);
  CHECK(make_sr_spec(SRKernel::Gaussian, 2).sigma_b() == 1.0);
  CHECK(make_sr_spec(SRKernel::Gaussian, 3).sigma_b() == 1.5);
}

TEST_CASE("blur is a true convolution") {
  Rng rng(1);
  const Tensor x = randn({1, 1, 6, 6}, rng);
  Tensor k({3, 3});
  k.set(1 * 3 + 2, 1.0);  // one step right of centre
  const Tensor y = build_operator(BlurSpec{k}, 1, 6, 6)->apply(x);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) CHECK(y.item(i * 6 + j) == x.item(i * 6 + (j + 5) % 6));
  }
}

TEST_CASE("operator identities") {
  Rng rng(2);
  const OperatorPtr id = build_operator(IdentitySpec{}, 3, 6, 6);
  const Tensor x = randn({1, 3, 6, 6}, rng);
  CHECK(max_abs(sub(id->apply(x), x)) == 0);
  CHECK(max_abs(sub(id->adjoint(x), x)) == 0);

  const OperatorPtr mask = build_operator(make_mask_spec(6, 6, 0.4, 3), 3, 6, 6);
  CHECK(max_abs(sub(mask->adjoint(mask->apply(x)), mask->apply(x))) == 0);
  const Tensor& m = operator_mask(*mask);
  CHECK(m.shape() == Shape{6, 6});
  CHECK(sum(m) == std::round(0.4 * 36));
  // shared across channels
  const Tensor ax = mask->apply(Tensor::full({1, 3, 6, 6}, 1.0));
  for (std::size_t c = 1; c < 3; ++c) {
    for (std::size_t p = 0; p < 36; ++p) CHECK(ax.item(c * 36 + p) == ax.item(p));
  }
  CHECK_THROWS_AS(operator_mask(*id), ArgumentError);
}

TEST_CASE("adjoint inner-product test") {
  Rng rng(3);
  for (const auto& op : all_operators(3, 18, 24)) {
    double worst = 0;
    for (int probe = 0; probe < 10; ++probe) {
      const Tensor x = randn(op->input_shape(), rng);
      const Tensor y = randn(op->output_shape(), rng);
      const double lhs = dot(op->apply(x), y), rhs = dot(x, op->adjoint(y));
      worst = std::max(worst, std::abs(lhs - rhs) / std::abs(lhs));
    }
    INFO(op->name());
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("operators accept batches and check extents") {
  Rng rng(4);
  for (const auto& op : all_operators(3, 12, 12)) {
    const Tensor xb = randn({2, 3, 12, 12}, rng);
    const Tensor yb = op->apply(xb);
    CHECK(yb.dim(0) == 2);
    CHECK_THROWS_AS(op->apply(randn({1, 3, 10, 12}, rng)), DimensionError);
  }
}

TEST_CASE("awgn") {
  const Tensor x = Tensor::full({1, 1, 1000, 1000}, 0.5);
  CHECK(max_abs(sub(add_awgn(x, 0.0, 7), x)) == 0);
  const double s = 0.1;
  const Tensor n = sub(add_awgn(x, s, 7), x);
  const double mean = sum(n) / static_cast<double>(n.numel());
  const double sd = std::sqrt(squared_norm(n) / static_cast<double>(n.numel()) - mean * mean);
  CHECK(std::abs(sd - s) <= 0.01 * s);
  CHECK(max_abs(sub(add_awgn(x, s, 7), add_awgn(x, s, 7))) == 0);
  CHECK(max_abs(sub(add_awgn(x, s, 7), add_awgn(x, s, 8))) > 0);
  CHECK_THROWS_AS(add_awgn(x, -1.0, 7), ArgumentError);
}

TEST_CASE("initial estimates") {
  Rng rng(5);
  const Tensor x = test::randu({1, 3, 12, 12}, rng);
  const OperatorPtr blur = build_operator(make_gaussian_kernel(5, 1.0), 3, 12, 12);
  const Tensor yb = blur->apply(x);
  CHECK(max_abs(sub(initial_estimate(*blur, yb), yb)) == 0);

  const OperatorPtr mask = build_operator(make_mask_spec(12, 12, 0.5, 1), 3, 12, 12);
  const Tensor ym = mask->apply(x);
  const Tensor xm = initial_estimate(*mask, ym);
  const Tensor& m = operator_mask(*mask);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < 144; ++p) CHECK(xm.item(c * 144 + p) == (m.item(p) > 0 ? x.item(c * 144 + p) : 0.5));
  }

  const OperatorPtr sr = build_operator(make_sr_spec(SRKernel::Bicubic, 2), 3, 12, 12);
  const Tensor xs = initial_estimate(*sr, sr->apply(Tensor::full({1, 3, 12, 12}, 0.25)));
  CHECK(xs.shape() == Shape{1, 3, 12, 12});
  CHECK(max_abs(sub(xs, Tensor::full(xs.shape(), 0.25))) <= 1e-12);
  // interpolation keeps the low-res samples at multiples of the factor
  const Tensor lo = randn({1, 1, 5, 4}, rng);
  const Tensor up = bicubic_upsample(lo, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(up.item((3 * i) * 12 + 3 * j) - lo.item(i * 4 + j)) <= 1e-12);
  }
}

TEST_CASE("mask spec draws the exact count and is seeded") {
  for (double p : {0.1, 0.2, 0.5, 1.0}) {
    const MaskSpec m = make_mask_spec(10, 7, p, 3);
    CHECK(sum(m.mask) == std::round(p * 70));
  }
  CHECK(max_abs(sub(make_mask_spec(8, 8, 0.3, 1).mask, make_mask_spec(8, 8, 0.3, 1).mask)) == 0);
  CHECK_THROWS_AS(make_mask_spec(8, 8, 1.5, 1), ArgumentError);
  CHECK_THROWS_AS(make_mask_spec(8, 8, 0.0, 1), ArgumentError);
}

TEST_CASE("shipped anisotropic kernels match the generator") {
  const std::filesystem::path dir = std::filesystem::path(PNPREG_SOURCE_DIR) / "data" / "kernels";
  const Tensor a = io::load_tensor(dir / "aniso_a.ptns");
  const Tensor b = io::load_tensor(dir / "aniso_b.ptns");
  CHECK(max_abs(sub(a, make_anisotropic_gaussian_kernel(25, 3.0, 1.0, std::numbers::pi / 4).kernel)) <= 1e-15);
  CHECK(max_abs(sub(b, make_anisotropic_gaussian_kernel(25, 2.5, 0.8, 2 * std::numbers::pi / 3).kernel)) <= 1e-15);
  CHECK(std::abs(sum(a) - 1) <= 1e-12);
  // rotating by pi/2 swaps the axes
  const Tensor r0 = make_anisotropic_gaussian_kernel(9, 2.0, 1.0, 0.0).kernel;
  const Tensor r1 = make_anisotropic_gaussian_kernel(9, 1.0, 2.0, std::numbers::pi / 2).kernel;
  CHECK(max_abs(sub(r0, r1)) <= 1e-12);
}
