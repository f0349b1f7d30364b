#include "pnpreg/metrics.hpp"

#include <cmath>

namespace pnpreg {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (a.numel() == 0) throw DimensionError("psnr: empty tensors");
  const double mse =
      a.dtype() == b.dtype() ? mean_squared_difference(a, b) : mean_squared_difference(a.to(DType::F64), b.to(DType::F64));
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace pnpreg
