#include "pnpreg/adam.hpp"

#include <cmath>
#include <string>

namespace pnpreg {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: params/grads count mismatch");
  if (!(state.options.lr > 0)) throw ArgumentError("adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i], *grads[i], "adam_step");
    require_same_dtype(*params[i], *grads[i], "adam_step");
    if (grads[i]->has_non_finite()) {
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(p->zeros_like());
      state.v.push_back(p->zeros_like());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state built for a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i]->shape()) throw DimensionError("adam_step: moment shape mismatch");
  }

  state.step += 1;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double step_size = o.lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    visit_dtype(params[i]->dtype(), [&]<typename T>() {
      auto p = params[i]->template data<T>();
      auto g = grads[i]->template data<T>();
      auto m = state.m[i].template data<T>();
      auto v = state.v[i].template data<T>();
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = o.beta1 * static_cast<double>(m[k]) + (1.0 - o.beta1) * gk;
        const double vk = o.beta2 * static_cast<double>(v[k]) + (1.0 - o.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double denom = std::sqrt(vk) / sqrt_bc2 + o.eps;
        p[k] = static_cast<T>(static_cast<double>(p[k]) - step_size * mk / denom);
      }
    });
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto* p : params) {
    values.push_back(&p->value);
    grads.push_back(&p->grad);
  }
  adam_step(values, grads, state);
}

}  // namespace pnpreg
