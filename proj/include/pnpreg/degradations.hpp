#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>

#include "pnpreg/autodiff.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg {

enum class OperatorKind { Identity, Blur, SuperResolution, Mask };

// A linear degradation A acting on N,C,H,W images with fixed C,H,W (any N).
// Implementations are immutable after construction.
class LinearOperator {
 public:
  LinearOperator(Shape input, Shape output) : input_(std::move(input)), output_(std::move(output)) {}
  virtual ~LinearOperator() = default;

  virtual OperatorKind kind() const = 0;
  virtual std::string name() const = 0;

  // Canonical shapes with batch extent 1.
  const Shape& input_shape() const noexcept { return input_; }
  const Shape& output_shape() const noexcept { return output_; }

  Tensor apply(const Tensor& x) const;
  Tensor adjoint(const Tensor& y) const;
  // Differentiable versions (backward of apply is adjoint and vice versa).
  Var apply(Var x) const;
  Var adjoint(Var y) const;

 protected:
  virtual Tensor do_apply(const Tensor& x) const = 0;
  virtual Tensor do_adjoint(const Tensor& y) const = 0;

 private:
  Shape input_;
  Shape output_;
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

struct IdentitySpec {};

// Circular blur. `kernel` is a 2-D tensor with odd extents.
struct BlurSpec {
  Tensor kernel;
};

enum class SRKernel { Bicubic, Gaussian };

// Blur followed by decimation keeping pixels at multiples of `factor`.
struct SRSpec {
  SRKernel kernel_type = SRKernel::Bicubic;
  int factor = 2;
  Tensor kernel;

  // Gaussian blur width used for the Gaussian variant: 0.5 * factor.
  double sigma_b() const { return 0.5 * factor; }
};

// Pixel-wise inpainting. `mask` is H x W with entries in {0, 1}, shared by all channels.
struct MaskSpec {
  double keep_rate = 1.0;
  std::uint64_t seed = 0;
  Tensor mask;
};

using OperatorSpec = std::variant<IdentitySpec, BlurSpec, SRSpec, MaskSpec>;

BlurSpec make_gaussian_kernel(int size, double sigma_b);
// Rotated anisotropic Gaussian: standard deviations (sigma_u, sigma_v) along
// axes rotated by theta radians, normalised to unit sum.
BlurSpec make_anisotropic_gaussian_kernel(int size, double sigma_u, double sigma_v, double theta);
// Separable Keys bicubic (a = -0.5) anti-aliasing kernel for factor t in {2, 3},
// size 4t - 1, centred on the kept pixel.
Tensor make_bicubic_kernel(int factor);
// Keys cubic convolution weight, a = -0.5.
double cubic_weight(double x);

SRSpec make_sr_spec(SRKernel kernel, int factor, int gaussian_size = 0);
MaskSpec make_mask_spec(std::size_t height, std::size_t width, double keep_rate, std::uint64_t seed);

// `channels/height/width` describe the clean image x.
OperatorPtr build_operator(const OperatorSpec& spec, std::size_t channels, std::size_t height, std::size_t width);

// The mask tensor of a Mask operator (throws for other kinds).
const Tensor& operator_mask(const LinearOperator& op);

// x + eta with eta ~ N(0, sigma_n^2) i.i.d., drawn from a seeded generator.
Tensor add_awgn(const Tensor& x, double sigma_n, std::uint64_t seed);

struct DegradationPipeline {
  OperatorPtr op;
  double sigma_n = 0.0;
  std::uint64_t seed = 0;

  Tensor degrade(const Tensor& x) const;
};

// Circular bicubic interpolation by an integer factor; low-res pixel i sits
// at high-res position factor * i.
Tensor bicubic_upsample(const Tensor& x, int factor);

// Task-specific starting point for the iterative solvers: the observation
// itself for blur/identity, bicubic upsampling for super-resolution, and
// grey (0.5) in the unknown pixels for inpainting.
Tensor initial_estimate(const LinearOperator& op, const Tensor& y);

}  // namespace pnpreg
