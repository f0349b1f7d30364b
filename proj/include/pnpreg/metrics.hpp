#pragma once

#include <limits>

#include "pnpreg/tensor.hpp"

namespace pnpreg {

// 10 log10(peak^2 / MSE) over every element jointly; +inf when a == b.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

}  // namespace pnpreg
