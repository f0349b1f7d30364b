#include "pnpreg/kernels.hpp"

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pnpreg::kernels {

namespace {

struct Segment {
  std::size_t begin;  // first output index
  std::size_t end;    // one past last output index
  std::ptrdiff_t offset;  // input index = out * stride + offset
};

// Splits the output range [0, out) into runs where in = out*stride + shift
// stays inside [0, in) after at most one wrap. Zero padding drops the
// out-of-range runs.
std::vector<Segment> make_segments(std::size_t out, std::size_t in, std::size_t stride, std::ptrdiff_t shift,
                                   Padding padding) {
  std::vector<Segment> segs;
  const auto n_in = static_cast<std::ptrdiff_t>(in);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::size_t o = 0;
  while (o < out) {
    const std::ptrdiff_t raw = static_cast<std::ptrdiff_t>(o) * s + shift;
    std::ptrdiff_t wrap = 0;
    if (raw < 0) {
      wrap = n_in;
    } else if (raw >= n_in) {
      wrap = -n_in;
    }
    std::size_t e = o + 1;
    while (e < out) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(e) * s + shift;
      const std::ptrdiff_t w = r < 0 ? n_in : (r >= n_in ? -n_in : 0);
      if (w != wrap) break;
      ++e;
    }
    if (wrap == 0 || padding == Padding::Circular) segs.push_back({o, e, shift + wrap});
    o = e;
  }
  return segs;
}

struct Geometry {
  std::size_t n, ci, h, w, co, kh, kw, ho, wo, stride;
  Padding padding;
  // column segments per kernel column b, row index map per kernel row a
  std::vector<std::vector<Segment>> cols;
  std::vector<std::vector<std::ptrdiff_t>> rows;  // rows[a][oy] = iy or -1

  Geometry(const Shape& x, const Shape& wshape, Padding pad, std::size_t s)
      : n(x[0]), ci(x[1]), h(x[2]), w(x[3]), co(wshape[0]), kh(wshape[2]), kw(wshape[3]), stride(s), padding(pad) {
    const auto out = conv2d_output_shape(x, wshape, pad, s);
    ho = out[2];
    wo = out[3];
    const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
    const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
    cols.resize(kw);
    for (std::size_t b = 0; b < kw; ++b) {
      cols[b] = make_segments(wo, w, s, static_cast<std::ptrdiff_t>(b) - pw, pad);
    }
    rows.assign(kh, std::vector<std::ptrdiff_t>(ho, -1));
    const auto hh = static_cast<std::ptrdiff_t>(h);
    for (std::size_t a = 0; a < kh; ++a) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s) + static_cast<std::ptrdiff_t>(a) - ph;
        if (iy < 0 || iy >= hh) {
          if (pad == Padding::Zero) continue;
          iy = (iy % hh + hh) % hh;
        }
        rows[a][oy] = iy;
      }
    }
  }
};

void check_conv_args(const Shape& x, const Shape& w, Padding padding, std::size_t stride) {
  if (x.size() != 4) throw DimensionError("conv2d: input must be N,C,H,W, got " + shape_str(x));
  if (w.size() != 4) throw DimensionError("conv2d: kernel must be Co,Ci,kh,kw, got " + shape_str(w));
  if (w[1] != x[1]) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(w[1]) + " input channels, got " +
                         std::to_string(x[1]));
  }
  if (w[2] % 2 == 0 || w[3] % 2 == 0) {
    throw ArgumentError("conv2d: kernel extents must be odd, got " + shape_str(w));
  }
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  if (padding == Padding::Circular) {
    if (w[2] > x[2] || w[3] > x[3]) {
      throw DimensionError("conv2d: circular padding needs kernel <= image, kernel " + shape_str(w) +
                           " image " + shape_str(x));
    }
    if (x[2] % stride != 0 || x[3] % stride != 0) {
      throw DimensionError("conv2d: circular stride " + std::to_string(stride) + " must divide extents " +
                           shape_str(x));
    }
  }
}

}  // namespace

Shape conv2d_output_shape(const Shape& x, const Shape& w, Padding padding, std::size_t stride) {
  check_conv_args(x, w, padding, stride);
  if (padding == Padding::Circular) return {x[0], w[0], x[2] / stride, x[3] / stride};
  return {x[0], w[0], (x[2] + stride - 1) / stride, (x[3] + stride - 1) / stride};
}

Tensor conv2d_forward_direct(const Tensor& x, const Tensor& w, Padding padding, std::size_t stride) {
  require_same_dtype(x, w, "conv2d");
  const Geometry g(x.shape(), w.shape(), padding, stride);
  Tensor y({g.n, g.co, g.ho, g.wo}, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const T* xd = x.data<T>().data();
    const T* wd = w.data<T>().data();
    T* yd = y.data<T>().data();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.co; ++o) {
        T* yp = yd + (n * g.co + o) * g.ho * g.wo;
        for (std::size_t c = 0; c < g.ci; ++c) {
          const T* xp = xd + (n * g.ci + c) * g.h * g.w;
          const T* wp = wd + (o * g.ci + c) * g.kh * g.kw;
          for (std::size_t a = 0; a < g.kh; ++a) {
            const auto& rowmap = g.rows[a];
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              const std::ptrdiff_t iy = rowmap[oy];
              if (iy < 0) continue;
              T* yr = yp + oy * g.wo;
              const T* xr = xp + static_cast<std::size_t>(iy) * g.w;
              for (std::size_t b = 0; b < g.kw; ++b) {
                const T wv = wp[a * g.kw + b];
                for (const auto& seg : g.cols[b]) {
                  if (g.stride == 1) {
                    const T* xs = xr + seg.offset;
                    for (std::size_t ox = seg.begin; ox < seg.end; ++ox) yr[ox] += wv * xs[ox];
                  } else {
                    for (std::size_t ox = seg.begin; ox < seg.end; ++ox) {
                      yr[ox] += wv * xr[static_cast<std::ptrdiff_t>(ox * g.stride) + seg.offset];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  });
  return y;
}

Tensor conv2d_backward_input_direct(const Tensor& gy, const Tensor& w, Padding padding, std::size_t stride,
                                    const Shape& x_shape) {
  require_same_dtype(gy, w, "conv2d_backward_input");
  const Geometry g(x_shape, w.shape(), padding, stride);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    throw DimensionError("conv2d_backward_input: gradient shape " + shape_str(gy.shape()) +
                         " does not match output " + shape_str({g.n, g.co, g.ho, g.wo}));
  }
  Tensor gx(x_shape, gy.dtype());
  visit_dtype(gy.dtype(), [&]<typename T>() {
    const T* gyd = gy.data<T>().data();
    const T* wd = w.data<T>().data();
    T* gxd = gx.data<T>().data();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t c = 0; c < g.ci; ++c) {
        T* xp = gxd + (n * g.ci + c) * g.h * g.w;
        for (std::size_t o = 0; o < g.co; ++o) {
          const T* yp = gyd + (n * g.co + o) * g.ho * g.wo;
          const T* wp = wd + (o * g.ci + c) * g.kh * g.kw;
          for (std::size_t a = 0; a < g.kh; ++a) {
            const auto& rowmap = g.rows[a];
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              const std::ptrdiff_t iy = rowmap[oy];
              if (iy < 0) continue;
              const T* yr = yp + oy * g.wo;
              T* xr = xp + static_cast<std::size_t>(iy) * g.w;
              for (std::size_t b = 0; b < g.kw; ++b) {
                const T wv = wp[a * g.kw + b];
                for (const auto& seg : g.cols[b]) {
                  if (g.stride == 1) {
                    T* xs = xr + seg.offset;
                    for (std::size_t ox = seg.begin; ox < seg.end; ++ox) xs[ox] += wv * yr[ox];
                  } else {
                    for (std::size_t ox = seg.begin; ox < seg.end; ++ox) {
                      xr[static_cast<std::ptrdiff_t>(ox * g.stride) + seg.offset] += wv * yr[ox];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  });
  return gx;
}

Tensor conv2d_backward_weight_direct(const Tensor& x, const Tensor& gy, Padding padding, std::size_t stride,
                                     const Shape& w_shape) {
  require_same_dtype(x, gy, "conv2d_backward_weight");
  const Geometry g(x.shape(), w_shape, padding, stride);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    throw DimensionError("conv2d_backward_weight: gradient shape " + shape_str(gy.shape()) +
                         " does not match output " + shape_str({g.n, g.co, g.ho, g.wo}));
  }
  Tensor gw(w_shape, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const T* xd = x.data<T>().data();
    const T* gyd = gy.data<T>().data();
    T* gwd = gw.data<T>().data();
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t o = 0; o < g.co; ++o) {
        const T* yp = gyd + (n * g.co + o) * g.ho * g.wo;
        for (std::size_t c = 0; c < g.ci; ++c) {
          const T* xp = xd + (n * g.ci + c) * g.h * g.w;
          T* wp = gwd + (o * g.ci + c) * g.kh * g.kw;
          for (std::size_t a = 0; a < g.kh; ++a) {
            const auto& rowmap = g.rows[a];
            for (std::size_t b = 0; b < g.kw; ++b) {
              T acc = 0;
              for (std::size_t oy = 0; oy < g.ho; ++oy) {
                const std::ptrdiff_t iy = rowmap[oy];
                if (iy < 0) continue;
                const T* yr = yp + oy * g.wo;
                const T* xr = xp + static_cast<std::size_t>(iy) * g.w;
                for (const auto& seg : g.cols[b]) {
                  if (g.stride == 1) {
                    const T* xs = xr + seg.offset;
                    for (std::size_t ox = seg.begin; ox < seg.end; ++ox) acc += yr[ox] * xs[ox];
                  } else {
                    for (std::size_t ox = seg.begin; ox < seg.end; ++ox) {
                      acc += yr[ox] * xr[static_cast<std::ptrdiff_t>(ox * g.stride) + seg.offset];
                    }
                  }
                }
              }
              wp[a * g.kw + b] += acc;
            }
          }
        }
      }
    }
  });
  return gw;
}

namespace {

// Small kernels go through im2col + GEMM; wide single-channel filters (blur
// kernels up to 25x25) stay on the direct loops, where the column buffer
// would be kh*kw times the image.
bool use_gemm(const Shape& w) { return w[2] * w[3] <= 49; }

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// col[(c*kh + a)*kw + b, oy*wo + ox] = x[c, iy(a, oy), ix(b, ox)], zero where padded out.
template <typename T>
void im2col(const Geometry& g, const T* xp, T* col) {
  const std::size_t p = g.ho * g.wo;
  std::fill(col, col + g.ci * g.kh * g.kw * p, T(0));
  for (std::size_t c = 0; c < g.ci; ++c) {
    const T* xc = xp + c * g.h * g.w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        T* row = col + ((c * g.kh + a) * g.kw + b) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = g.rows[a][oy];
          if (iy < 0) continue;
          const T* xr = xc + static_cast<std::size_t>(iy) * g.w;
          T* dst = row + oy * g.wo;
          for (const auto& seg : g.cols[b]) {
            for (std::size_t ox = seg.begin; ox < seg.end; ++ox) {
              dst[ox] = xr[static_cast<std::ptrdiff_t>(ox * g.stride) + seg.offset];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Geometry& g, const T* col, T* xp) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.ci; ++c) {
    T* xc = xp + c * g.h * g.w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        const T* row = col + ((c * g.kh + a) * g.kw + b) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const std::ptrdiff_t iy = g.rows[a][oy];
          if (iy < 0) continue;
          T* xr = xc + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.wo;
          for (const auto& seg : g.cols[b]) {
            for (std::size_t ox = seg.begin; ox < seg.end; ++ox) {
              xr[static_cast<std::ptrdiff_t>(ox * g.stride) + seg.offset] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, Padding padding, std::size_t stride) {
  require_same_dtype(x, w, "conv2d");
  if (!use_gemm(w.shape())) return conv2d_forward_direct(x, w, padding, stride);
  const Geometry g(x.shape(), w.shape(), padding, stride);
  Tensor y({g.n, g.co, g.ho, g.wo}, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const std::size_t k = g.ci * g.kh * g.kw, p = g.ho * g.wo;
    std::vector<T> col(k * p);
    const Eigen::Map<const RowMat<T>> wm(w.data<T>().data(), static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(k));
    const Eigen::Map<const RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    for (std::size_t n = 0; n < g.n; ++n) {
      im2col(g, x.data<T>().data() + n * g.ci * g.h * g.w, col.data());
      Eigen::Map<RowMat<T>> ym(y.data<T>().data() + n * g.co * p, static_cast<Eigen::Index>(g.co),
                               static_cast<Eigen::Index>(p));
      ym.noalias() = wm * cm;
    }
  });
  return y;
}

Tensor conv2d_backward_input(const Tensor& gy, const Tensor& w, Padding padding, std::size_t stride,
                             const Shape& x_shape) {
  require_same_dtype(gy, w, "conv2d_backward_input");
  if (!use_gemm(w.shape())) return conv2d_backward_input_direct(gy, w, padding, stride, x_shape);
  const Geometry g(x_shape, w.shape(), padding, stride);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    throw DimensionError("conv2d_backward_input: gradient shape " + shape_str(gy.shape()) +
                         " does not match output " + shape_str({g.n, g.co, g.ho, g.wo}));
  }
  Tensor gx(x_shape, gy.dtype());
  visit_dtype(gy.dtype(), [&]<typename T>() {
    const std::size_t k = g.ci * g.kh * g.kw, p = g.ho * g.wo;
    std::vector<T> col(k * p);
    const Eigen::Map<const RowMat<T>> wm(w.data<T>().data(), static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(k));
    Eigen::Map<RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    for (std::size_t n = 0; n < g.n; ++n) {
      const Eigen::Map<const RowMat<T>> ym(gy.data<T>().data() + n * g.co * p, static_cast<Eigen::Index>(g.co),
                                           static_cast<Eigen::Index>(p));
      cm.noalias() = wm.transpose() * ym;
      col2im(g, col.data(), gx.data<T>().data() + n * g.ci * g.h * g.w);
    }
  });
  return gx;
}

Tensor conv2d_backward_weight(const Tensor& x, const Tensor& gy, Padding padding, std::size_t stride,
                              const Shape& w_shape) {
  require_same_dtype(x, gy, "conv2d_backward_weight");
  if (!use_gemm(w_shape)) return conv2d_backward_weight_direct(x, gy, padding, stride, w_shape);
  const Geometry g(x.shape(), w_shape, padding, stride);
  if (gy.shape() != Shape{g.n, g.co, g.ho, g.wo}) {
    throw DimensionError("conv2d_backward_weight: gradient shape " + shape_str(gy.shape()) +
                         " does not match output " + shape_str({g.n, g.co, g.ho, g.wo}));
  }
  Tensor gw(w_shape, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const std::size_t k = g.ci * g.kh * g.kw, p = g.ho * g.wo;
    std::vector<T> col(k * p);
    const Eigen::Map<const RowMat<T>> cm(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    Eigen::Map<RowMat<T>> gwm(gw.data<T>().data(), static_cast<Eigen::Index>(g.co), static_cast<Eigen::Index>(k));
    for (std::size_t n = 0; n < g.n; ++n) {
      im2col(g, x.data<T>().data() + n * g.ci * g.h * g.w, col.data());
      const Eigen::Map<const RowMat<T>> ym(gy.data<T>().data() + n * g.co * p, static_cast<Eigen::Index>(g.co),
                                           static_cast<Eigen::Index>(p));
      gwm.noalias() += ym * cm.transpose();
    }
  });
  return gw;
}

Tensor filter2d_circular(const Tensor& x, const Tensor& k, bool flip) {
  if (x.rank() != 4) throw DimensionError("filter2d: input must be N,C,H,W, got " + shape_str(x.shape()));
  if (k.rank() != 2) throw DimensionError("filter2d: kernel must be 2-D, got " + shape_str(k.shape()));
  const std::size_t kh = k.dim(0), kw = k.dim(1);
  Tensor w({1, 1, kh, kw}, x.dtype());
  for (std::size_t i = 0; i < kh; ++i) {
    for (std::size_t j = 0; j < kw; ++j) {
      const std::size_t src = flip ? (kh - 1 - i) * kw + (kw - 1 - j) : i * kw + j;
      w.set(i * kw + j, k.item(src));
    }
  }
  const auto& s = x.shape();
  const Tensor planes = x.reshaped({s[0] * s[1], 1, s[2], s[3]});
  return conv2d_forward(planes, w, Padding::Circular, 1).reshaped(s);
}

namespace {

void check_image(const Tensor& x, const char* what) {
  if (x.rank() != 4) throw DimensionError(std::string(what) + ": expected N,C,H,W, got " + shape_str(x.shape()));
}

// Generic gather over the last two axes: out[p, i, j] = in[p, map(i, j)].
template <typename Map>
Tensor remap(const Tensor& x, std::size_t oh, std::size_t ow, Map map) {
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1];
  const std::size_t h = s[2], w = s[3];
  Tensor out({s[0], s[1], oh, ow}, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const T* xd = x.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* xp = xd + p * h * w;
      T* op = od + p * oh * ow;
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          const auto [si, sj] = map(i, j);
          op[i * ow + j] = xp[si * w + sj];
        }
      }
    }
  });
  return out;
}

}  // namespace

Tensor downsample(const Tensor& x, std::size_t factor) {
  check_image(x, "downsample");
  if (factor == 0) throw ArgumentError("downsample: factor must be positive");
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw DimensionError("downsample: extents " + shape_str(x.shape()) + " not divisible by " +
                         std::to_string(factor));
  }
  return remap(x, x.dim(2) / factor, x.dim(3) / factor, [factor](std::size_t i, std::size_t j) {
    return std::pair{i * factor, j * factor};
  });
}

Tensor upsample_zero_fill(const Tensor& x, std::size_t factor) {
  check_image(x, "upsample_zero_fill");
  if (factor == 0) throw ArgumentError("upsample_zero_fill: factor must be positive");
  const auto& s = x.shape();
  Tensor out({s[0], s[1], s[2] * factor, s[3] * factor}, x.dtype());
  const std::size_t planes = s[0] * s[1];
  const std::size_t h = s[2], w = s[3], ow = w * factor;
  visit_dtype(x.dtype(), [&]<typename T>() {
    const T* xd = x.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          od[p * h * factor * ow + (i * factor) * ow + j * factor] = xd[p * h * w + i * w + j];
        }
      }
    }
  });
  return out;
}

Tensor pad_replicate(const Tensor& x, std::size_t h, std::size_t w) {
  check_image(x, "pad_replicate");
  const std::size_t ih = x.dim(2), iw = x.dim(3);
  if (h < ih || w < iw) throw DimensionError("pad_replicate: target smaller than input");
  return remap(x, h, w, [ih, iw](std::size_t i, std::size_t j) {
    return std::pair{std::min(i, ih - 1), std::min(j, iw - 1)};
  });
}

Tensor pad_replicate_adjoint(const Tensor& g, std::size_t h, std::size_t w) {
  check_image(g, "pad_replicate_adjoint");
  const auto& s = g.shape();
  const std::size_t gh = s[2], gw = s[3];
  if (h > gh || w > gw || h == 0 || w == 0) throw DimensionError("pad_replicate_adjoint: bad target extent");
  Tensor out({s[0], s[1], h, w}, g.dtype());
  visit_dtype(g.dtype(), [&]<typename T>() {
    const T* gd = g.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t p = 0; p < s[0] * s[1]; ++p) {
      for (std::size_t i = 0; i < gh; ++i) {
        const std::size_t ti = std::min(i, h - 1);
        for (std::size_t j = 0; j < gw; ++j) {
          od[p * h * w + ti * w + std::min(j, w - 1)] += gd[p * gh * gw + i * gw + j];
        }
      }
    }
  });
  return out;
}

Tensor crop(const Tensor& x, std::size_t h, std::size_t w) {
  check_image(x, "crop");
  if (h > x.dim(2) || w > x.dim(3)) throw DimensionError("crop: window larger than input");
  return remap(x, h, w, [](std::size_t i, std::size_t j) { return std::pair{i, j}; });
}

Tensor crop_adjoint(const Tensor& g, std::size_t h, std::size_t w) {
  check_image(g, "crop_adjoint");
  const auto& s = g.shape();
  if (h < s[2] || w < s[3]) throw DimensionError("crop_adjoint: target smaller than gradient");
  Tensor out({s[0], s[1], h, w}, g.dtype());
  visit_dtype(g.dtype(), [&]<typename T>() {
    const T* gd = g.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t p = 0; p < s[0] * s[1]; ++p) {
      for (std::size_t i = 0; i < s[2]; ++i) {
        std::copy_n(gd + (p * s[2] + i) * s[3], s[3], od + p * h * w + i * w);
      }
    }
  });
  return out;
}

namespace {

Tensor transpose_hw(const Tensor& x) {
  return remap(x, x.dim(3), x.dim(2), [](std::size_t i, std::size_t j) { return std::pair{j, i}; });
}

Tensor flip_rows(const Tensor& x) {
  const std::size_t h = x.dim(2);
  return remap(x, h, x.dim(3), [h](std::size_t i, std::size_t j) { return std::pair{h - 1 - i, j}; });
}

Tensor flip_cols(const Tensor& x) {
  const std::size_t w = x.dim(3);
  return remap(x, x.dim(2), w, [w](std::size_t i, std::size_t j) { return std::pair{i, w - 1 - j}; });
}

}  // namespace

Tensor dihedral(const Tensor& x, int index) {
  check_image(x, "dihedral");
  if (index < 0 || index >= 8) throw ArgumentError("dihedral: index must be in [0, 8)");
  Tensor y = x;
  if (index & 1) y = transpose_hw(y);
  if (index & 2) y = flip_rows(y);
  if (index & 4) y = flip_cols(y);
  return y;
}

Tensor dihedral_inverse(const Tensor& x, int index) {
  check_image(x, "dihedral_inverse");
  if (index < 0 || index >= 8) throw ArgumentError("dihedral_inverse: index must be in [0, 8)");
  Tensor y = x;
  if (index & 4) y = flip_cols(y);
  if (index & 2) y = flip_rows(y);
  if (index & 1) y = transpose_hw(y);
  return y;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  check_image(a, "concat_channels");
  check_image(b, "concat_channels");
  require_same_dtype(a, b, "concat_channels");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw DimensionError("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t plane = sa[2] * sa[3];
  Tensor out({sa[0], sa[1] + sb[1], sa[2], sa[3]}, a.dtype());
  visit_dtype(a.dtype(), [&]<typename T>() {
    const T* ad = a.data<T>().data();
    const T* bd = b.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t n = 0; n < sa[0]; ++n) {
      od = std::copy_n(ad + n * sa[1] * plane, sa[1] * plane, od);
      od = std::copy_n(bd + n * sb[1] * plane, sb[1] * plane, od);
    }
  });
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  check_image(x, "slice_channels");
  const auto& s = x.shape();
  if (begin > end || end > s[1]) throw DimensionError("slice_channels: bad range");
  const std::size_t plane = s[2] * s[3];
  Tensor out({s[0], end - begin, s[2], s[3]}, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    const T* xd = x.data<T>().data();
    T* od = out.data<T>().data();
    for (std::size_t n = 0; n < s[0]; ++n) {
      od = std::copy_n(xd + (n * s[1] + begin) * plane, (end - begin) * plane, od);
    }
  });
  return out;
}

}  // namespace pnpreg::kernels
