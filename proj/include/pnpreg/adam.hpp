#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pnpreg/autodiff.hpp"
#include "pnpreg/tensor.hpp"

namespace pnpreg {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for a fixed list of tensors. Buffers are created lazily on
// the first step and must keep matching the parameter shapes afterwards.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  explicit AdamState(AdamOptions opts) : options(opts) {}
};

// One bias-corrected Adam update of `params` from `grads`.
// Throws NumericError (leaving params and state untouched) on a non-finite gradient.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state);

// Convenience overload using each Parameter's accumulated gradient.
void adam_step(std::span<Parameter* const> params, AdamState& state);

}  // namespace pnpreg
