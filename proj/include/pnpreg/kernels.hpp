#pragma once

#include <cstddef>

#include "pnpreg/tensor.hpp"

// Untracked numeric kernels shared by the autodiff ops and the degradation
// operators. All image tensors are N,C,H,W.
namespace pnpreg::kernels {

enum class Padding { Circular, Zero };

// Cross-correlation with "same" padding (kernel radius k/2) and stride s:
//   y[n,o,i,j] = sum_{c,a,b} w[o,c,a,b] * x[n,c, s*i + a - kh/2, s*j + b - kw/2]
// Circular padding wraps indices and requires stride | H, W and kernel <= image.
// Zero padding gives ceil(H/s) x ceil(W/s) outputs.
Shape conv2d_output_shape(const Shape& x, const Shape& w, Padding padding, std::size_t stride);
Tensor conv2d_forward(const Tensor& x, const Tensor& w, Padding padding, std::size_t stride);
// Adjoint of conv2d_forward with respect to x.
Tensor conv2d_backward_input(const Tensor& gy, const Tensor& w, Padding padding, std::size_t stride,
                             const Shape& x_shape);
// Gradient of <gy, conv2d_forward(x, w)> with respect to w.
Tensor conv2d_backward_weight(const Tensor& x, const Tensor& gy, Padding padding, std::size_t stride,
                              const Shape& w_shape);

// Plain-loop versions of the three conv kernels. The public entry points
// switch to im2col + GEMM for small kernels; these stay as the reference.
Tensor conv2d_forward_direct(const Tensor& x, const Tensor& w, Padding padding, std::size_t stride);
Tensor conv2d_backward_input_direct(const Tensor& gy, const Tensor& w, Padding padding, std::size_t stride,
                                    const Shape& x_shape);
Tensor conv2d_backward_weight_direct(const Tensor& x, const Tensor& gy, Padding padding, std::size_t stride,
                                     const Shape& w_shape);

// Applies one 2-D kernel k[kh,kw] to every channel with circular boundaries.
// `flip` turns the correlation into a true convolution.
Tensor filter2d_circular(const Tensor& x, const Tensor& k, bool flip);

// Keeps every factor-th pixel starting at index 0.
Tensor downsample(const Tensor& x, std::size_t factor);
// Exact adjoint of downsample: places x on the index-0 grid, zeros elsewhere.
Tensor upsample_zero_fill(const Tensor& x, std::size_t factor);

// Replicate-pads H,W at the bottom/right up to (h, w).
Tensor pad_replicate(const Tensor& x, std::size_t h, std::size_t w);
// Adjoint of pad_replicate: folds padded rows/columns back onto the edge.
Tensor pad_replicate_adjoint(const Tensor& g, std::size_t h, std::size_t w);
// Top-left (h, w) window.
Tensor crop(const Tensor& x, std::size_t h, std::size_t w);
// Adjoint of crop: zero-extends to (h, w).
Tensor crop_adjoint(const Tensor& g, std::size_t h, std::size_t w);

// Dihedral group D4 acting on the last two axes. index in [0, 8):
// bit 0 = transpose, bit 1 = flip rows, bit 2 = flip columns, applied in that order.
Tensor dihedral(const Tensor& x, int index);
Tensor dihedral_inverse(const Tensor& x, int index);

// Concatenates along axis 1 (channels).
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Channels [begin, end) of x.
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end);

}  // namespace pnpreg::kernels
