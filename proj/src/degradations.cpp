#include "pnpreg/degradations.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>

#include "pnpreg/kernels.hpp"

namespace pnpreg {

namespace {

void check_batch(const Tensor& t, const Shape& expected, const std::string& who) {
  if (t.rank() != 4 || t.dim(1) != expected[1] || t.dim(2) != expected[2] || t.dim(3) != expected[3]) {
    throw DimensionError(who + ": expected [N," + std::to_string(expected[1]) + "," + std::to_string(expected[2]) +
                         "," + std::to_string(expected[3]) + "], got " + shape_str(t.shape()));
  }
}

Tensor normalized(Tensor k) {
  const double s = sum(k);
  return scale(k, 1.0 / s);
}

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(Shape s) : LinearOperator(s, s) {}
  OperatorKind kind() const override { return OperatorKind::Identity; }
  std::string name() const override { return "identity"; }

 protected:
  Tensor do_apply(const Tensor& x) const override { return x; }
  Tensor do_adjoint(const Tensor& y) const override { return y; }
};

class BlurOperator final : public LinearOperator {
 public:
  BlurOperator(Shape s, Tensor kernel) : LinearOperator(s, s), kernel_(std::move(kernel)) {}
  OperatorKind kind() const override { return OperatorKind::Blur; }
  std::string name() const override { return "blur"; }

 protected:
  // Convolution; the adjoint is the correlation with the same kernel.
  Tensor do_apply(const Tensor& x) const override { return kernels::filter2d_circular(x, kernel_.to(x.dtype()), true); }
  Tensor do_adjoint(const Tensor& y) const override {
    return kernels::filter2d_circular(y, kernel_.to(y.dtype()), false);
  }

 private:
  Tensor kernel_;
};

class SROperator final : public LinearOperator {
 public:
  SROperator(Shape in, Shape out, Tensor kernel, std::size_t factor)
      : LinearOperator(std::move(in), std::move(out)), kernel_(std::move(kernel)), factor_(factor) {}
  OperatorKind kind() const override { return OperatorKind::SuperResolution; }
  std::string name() const override { return "sr" + std::to_string(factor_); }

 protected:
  Tensor do_apply(const Tensor& x) const override {
    return kernels::downsample(kernels::filter2d_circular(x, kernel_.to(x.dtype()), true), factor_);
  }
  Tensor do_adjoint(const Tensor& y) const override {
    return kernels::filter2d_circular(kernels::upsample_zero_fill(y, factor_), kernel_.to(y.dtype()), false);
  }

 private:
  Tensor kernel_;
  std::size_t factor_;
};

class MaskOperator final : public LinearOperator {
 public:
  MaskOperator(Shape s, Tensor mask) : LinearOperator(s, s), mask_(std::move(mask)) {}
  OperatorKind kind() const override { return OperatorKind::Mask; }
  std::string name() const override { return "mask"; }
  const Tensor& mask() const { return mask_; }

 protected:
  Tensor do_apply(const Tensor& x) const override {
    Tensor out = x;
    const std::size_t plane = mask_.numel();
    const std::size_t planes = x.numel() / plane;
    const auto m = mask_.data<double>();
    visit_dtype(x.dtype(), [&]<typename T>() {
      auto d = out.data<T>();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < plane; ++i) d[p * plane + i] *= static_cast<T>(m[i]);
      }
    });
    return out;
  }
  Tensor do_adjoint(const Tensor& y) const override { return do_apply(y); }

 private:
  Tensor mask_;
};

}  // namespace

Tensor LinearOperator::apply(const Tensor& x) const {
  check_batch(x, input_, name() + " apply");
  return do_apply(x);
}

Tensor LinearOperator::adjoint(const Tensor& y) const {
  check_batch(y, output_, name() + " adjoint");
  return do_adjoint(y);
}

Var LinearOperator::apply(Var x) const {
  check_batch(x.value(), input_, name() + " apply");
  return ad::linear(
      x, [this](const Tensor& v) { return do_apply(v); }, [this](const Tensor& g) { return do_adjoint(g); });
}

Var LinearOperator::adjoint(Var y) const {
  check_batch(y.value(), output_, name() + " adjoint");
  return ad::linear(
      y, [this](const Tensor& v) { return do_adjoint(v); }, [this](const Tensor& g) { return do_apply(g); });
}

BlurSpec make_gaussian_kernel(int size, double sigma_b) {
  return make_anisotropic_gaussian_kernel(size, sigma_b, sigma_b, 0.0);
}

BlurSpec make_anisotropic_gaussian_kernel(int size, double sigma_u, double sigma_v, double theta) {
  if (size < 1 || size % 2 == 0) throw ArgumentError("gaussian kernel size must be odd and >= 1, got " + std::to_string(size));
  if (!(sigma_u > 0) || !(sigma_v > 0)) throw ArgumentError("gaussian kernel widths must be positive");
  const auto n = static_cast<std::size_t>(size);
  const double c = (size - 1) / 2.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  Tensor k({n, n}, DType::F64);
  auto d = k.data<double>();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double y = static_cast<double>(i) - c;
      const double x = static_cast<double>(j) - c;
      const double u = ct * x + st * y;
      const double v = -st * x + ct * y;
      d[i * n + j] = std::exp(-0.5 * (u * u / (sigma_u * sigma_u) + v * v / (sigma_v * sigma_v)));
    }
  }
  return BlurSpec{normalized(std::move(k))};
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  const double t = std::abs(x);
  if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
  if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
  return 0.0;
}

Tensor make_bicubic_kernel(int factor) {
  if (factor != 2 && factor != 3) throw ArgumentError("bicubic kernel supports factors 2 and 3, got " + std::to_string(factor));
  const int radius = 2 * factor - 1;
  const auto n = static_cast<std::size_t>(2 * radius + 1);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = cubic_weight(static_cast<double>(static_cast<int>(i) - radius) / factor) / factor;
  }
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  Tensor k({n, n}, DType::F64);
  auto d = k.data<double>();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = w[i] * w[j];
  }
  return k;
}

SRSpec make_sr_spec(SRKernel kernel, int factor, int gaussian_size) {
  if (factor != 2 && factor != 3) throw ArgumentError("super-resolution factor must be 2 or 3, got " + std::to_string(factor));
  SRSpec spec;
  spec.kernel_type = kernel;
  spec.factor = factor;
  if (kernel == SRKernel::Bicubic) {
    spec.kernel = make_bicubic_kernel(factor);
  } else {
    const int size = gaussian_size > 0 ? gaussian_size : 2 * static_cast<int>(std::ceil(3.0 * spec.sigma_b())) + 1;
    spec.kernel = make_gaussian_kernel(size, spec.sigma_b()).kernel;
  }
  return spec;
}

MaskSpec make_mask_spec(std::size_t height, std::size_t width, double keep_rate, std::uint64_t seed) {
  if (!(keep_rate > 0.0) || keep_rate > 1.0) throw ArgumentError("mask keep rate must be in (0, 1]");
  const std::size_t pixels = height * width;
  const auto keep = static_cast<std::size_t>(std::llround(keep_rate * static_cast<double>(pixels)));
  std::vector<std::size_t> order(pixels);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Tensor mask({height, width}, DType::F64);
  for (std::size_t i = 0; i < keep; ++i) mask.set(order[i], 1.0);
  return MaskSpec{keep_rate, seed, std::move(mask)};
}

OperatorPtr build_operator(const OperatorSpec& spec, std::size_t channels, std::size_t height, std::size_t width) {
  const Shape in{1, channels, height, width};
  return std::visit(
      [&](const auto& s) -> OperatorPtr {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, IdentitySpec>) {
          return std::make_shared<IdentityOperator>(in);
        } else if constexpr (std::is_same_v<S, BlurSpec>) {
          if (s.kernel.rank() != 2 || s.kernel.dim(0) % 2 == 0 || s.kernel.dim(1) % 2 == 0) {
            throw ArgumentError("blur kernel must be 2-D with odd extents, got " + shape_str(s.kernel.shape()));
          }
          if (s.kernel.dim(0) > height || s.kernel.dim(1) > width) {
            throw DimensionError("blur kernel " + shape_str(s.kernel.shape()) + " larger than image");
          }
          return std::make_shared<BlurOperator>(in, s.kernel.to(DType::F64));
        } else if constexpr (std::is_same_v<S, SRSpec>) {
          const auto t = static_cast<std::size_t>(s.factor);
          if (s.factor < 1 || height % t != 0 || width % t != 0) {
            throw DimensionError("image " + shape_str(in) + " not divisible by factor " + std::to_string(s.factor));
          }
          if (s.kernel.dim(0) > height || s.kernel.dim(1) > width) {
            throw DimensionError("super-resolution kernel larger than image");
          }
          return std::make_shared<SROperator>(in, Shape{1, channels, height / t, width / t}, s.kernel.to(DType::F64), t);
        } else {
          if (s.mask.rank() != 2 || s.mask.dim(0) != height || s.mask.dim(1) != width) {
            throw DimensionError("mask " + shape_str(s.mask.shape()) + " does not match image " + shape_str(in));
          }
          for (double v : s.mask.to_vector()) {
            if (v != 0.0 && v != 1.0) throw ArgumentError("mask entries must be 0 or 1");
          }
          return std::make_shared<MaskOperator>(in, s.mask.to(DType::F64));
        }
      },
      spec);
}

const Tensor& operator_mask(const LinearOperator& op) {
  if (op.kind() != OperatorKind::Mask) throw ArgumentError("operator is not a mask");
  return static_cast<const MaskOperator&>(op).mask();
}

Tensor add_awgn(const Tensor& x, double sigma_n, std::uint64_t seed) {
  if (sigma_n < 0) throw ArgumentError("noise level must be non-negative");
  if (sigma_n == 0) return x;
  Tensor out = x;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma_n);
  visit_dtype(x.dtype(), [&]<typename T>() {
    for (T& v : out.data<T>()) v = static_cast<T>(static_cast<double>(v) + normal(rng));
  });
  return out;
}

Tensor DegradationPipeline::degrade(const Tensor& x) const {
  if (!op) throw ArgumentError("degradation pipeline has no operator");
  return add_awgn(op->apply(x), sigma_n, seed);
}

Tensor bicubic_upsample(const Tensor& x, int factor) {
  if (x.rank() != 4) throw DimensionError("bicubic_upsample: expected N,C,H,W");
  if (factor < 1) throw ArgumentError("bicubic_upsample: factor must be positive");
  const auto t = static_cast<std::size_t>(factor);
  const std::size_t h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h * t, ow = w * t;
  // Per output phase: 4 taps at offsets -1..2 around floor(j / t).
  std::vector<std::array<double, 4>> phase(t);
  for (std::size_t p = 0; p < t; ++p) {
    const double frac = static_cast<double>(p) / factor;
    for (int k = 0; k < 4; ++k) phase[p][static_cast<std::size_t>(k)] = cubic_weight(frac - (k - 1));
  }
  const auto wrap = [](std::ptrdiff_t i, std::size_t n) {
    const auto m = static_cast<std::ptrdiff_t>(n);
    return static_cast<std::size_t>((i % m + m) % m);
  };
  const Tensor xd = x.to(DType::F64);
  const auto src = xd.data<double>();
  const std::size_t planes = x.dim(0) * x.dim(1);
  // Rows first, then columns.
  std::vector<double> tmp(planes * oh * w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < oh; ++i) {
      const auto base = static_cast<std::ptrdiff_t>(i / t);
      const auto& wt = phase[i % t];
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += wt[static_cast<std::size_t>(k)] * src[pl * h * w + wrap(base + k - 1, h) * w + j];
        tmp[pl * oh * w + i * w + j] = acc;
      }
    }
  }
  Tensor out({x.dim(0), x.dim(1), oh, ow}, DType::F64);
  auto dst = out.data<double>();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const auto base = static_cast<std::ptrdiff_t>(j / t);
        const auto& wt = phase[j % t];
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += wt[static_cast<std::size_t>(k)] * tmp[pl * oh * w + i * w + wrap(base + k - 1, w)];
        dst[pl * oh * ow + i * ow + j] = acc;
      }
    }
  }
  return out.to(x.dtype());
}

Tensor initial_estimate(const LinearOperator& op, const Tensor& y) {
  switch (op.kind()) {
    case OperatorKind::Identity:
    case OperatorKind::Blur:
      return y;
    case OperatorKind::SuperResolution: {
      const auto factor = static_cast<int>(op.input_shape()[2] / op.output_shape()[2]);
      return bicubic_upsample(y, factor);
    }
    case OperatorKind::Mask: {
      const Tensor& mask = operator_mask(op);
      Tensor x = y;
      const std::size_t plane = mask.numel();
      for (std::size_t i = 0; i < x.numel(); ++i) {
        if (mask.item(i % plane) == 0.0) x.set(i, 0.5);
      }
      return x;
    }
  }
  return y;
}

}  // namespace pnpreg
