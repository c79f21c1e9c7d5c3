#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dentnet/tensor.hpp"

namespace dentnet {

enum class Padding { Valid, Same };

// C[m x n] = A[m x k] * B[k x n].
// i-t-j loop order: the inner loop runs over contiguous rows of B and C.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: expected rank-2 tensors, got " +
                                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* crow = pc + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      if (av == 0.0) continue;
      const double* brow = pb + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C[k x n] = A^T[k x m'] * B[m' x n] for A[m' x k]; accumulates into c.
inline void matmul_at_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != m || c.dim(0) != k || c.dim(1) != n)
    throw std::invalid_argument("matmul_at_acc: shape mismatch " + shape_str(a.shape()) +
                                ", " + shape_str(b.shape()) + ", " + shape_str(c.shape()));
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    const double* brow = pb + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = arow[t];
      if (av == 0.0) continue;
      double* crow = pc + t * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k'] = A[m x n] * B^T[n x k'] for B[k' x n].
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
  if (b.dim(1) != n)
    throw std::invalid_argument("matmul_bt: shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  Tensor c({m, k});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * n;
    double* crow = pc + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double* brow = pb + t * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[t] = s;
    }
  }
  return c;
}

inline Tensor transposed(const Tensor& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t k,
                                  std::size_t stride, Padding padding) {
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  ConvGeometry g;
  if (padding == Padding::Same) {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + k;
    const std::size_t need_w = (g.out_w - 1) * stride + k;
    const std::size_t pad_h = need_h > h ? need_h - h : 0;
    const std::size_t pad_w = need_w > w ? need_w - w : 0;
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  } else {
    if (k > h || k > w)
      throw std::invalid_argument("conv2d: kernel " + std::to_string(k) +
                                  " larger than input " + std::to_string(h) + "x" +
                                  std::to_string(w));
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  }
  return g;
}

// Lower patches of a [H x W x C] image into a [outH*outW x K*K*C] matrix.
// Out-of-border samples are zero.
inline Tensor im2col(const Tensor& input, std::size_t k, std::size_t stride,
                     const ConvGeometry& g) {
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  Tensor col({g.out_h * g.out_w, k * k * c});
  const double* src = input.data();
  double* dst = col.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      double* row = dst + (oy * g.out_w + ox) * k * k * c;
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) -
                                static_cast<std::ptrdiff_t>(g.pad_top);
      const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) -
                                static_cast<std::ptrdiff_t>(g.pad_left);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
          double* cell = row + (ky * k + kx) * c;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
              ix >= static_cast<std::ptrdiff_t>(w)) {
            std::fill(cell, cell + c, 0.0);
          } else {
            const double* px = src + (static_cast<std::size_t>(iy) * w +
                                      static_cast<std::size_t>(ix)) * c;
            std::copy(px, px + c, cell);
          }
        }
      }
    }
  }
  return col;
}

// Scatter-add a [outH*outW x K*K*C] matrix back onto a [H x W x C] image.
inline Tensor col2im(const Tensor& col, std::size_t h, std::size_t w, std::size_t c,
                     std::size_t k, std::size_t stride, const ConvGeometry& g) {
  Tensor img({h, w, c});
  double* dst = img.data();
  const double* src = col.data();
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const double* row = src + (oy * g.out_w + ox) * k * k * c;
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) -
                                static_cast<std::ptrdiff_t>(g.pad_top);
      const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) -
                                static_cast<std::ptrdiff_t>(g.pad_left);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* cell = row + (ky * k + kx) * c;
          double* px = dst + (static_cast<std::size_t>(iy) * w +
                              static_cast<std::size_t>(ix)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) px[ch] += cell[ch];
        }
      }
    }
  }
  return img;
}

// 2-D cross-correlation (no kernel flip) of a [H x W x C] input with
// [K x K x C x F] kernels plus a per-filter bias. Lowered to im2col +
// matmul; the kernel layout flattens directly to a [K*K*C x F] matrix.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                     std::size_t stride = 1, Padding padding = Padding::Same) {
  if (input.rank() != 3)
    throw std::invalid_argument("conv2d: input must be HxWxC, got " + shape_str(input.shape()));
  if (kernels.rank() != 4 || kernels.dim(0) != kernels.dim(1))
    throw std::invalid_argument("conv2d: kernels must be KxKxCxF, got " +
                                shape_str(kernels.shape()));
  if (kernels.dim(2) != input.dim(2))
    throw std::invalid_argument("conv2d: channel mismatch: input " + shape_str(input.shape()) +
                                " vs kernels " + shape_str(kernels.shape()));
  const std::size_t k = kernels.dim(0), f = kernels.dim(3);
  if (bias.size() != f)
    throw std::invalid_argument("conv2d: bias length " + std::to_string(bias.size()) +
                                " does not match filter count " + std::to_string(f));
  const ConvGeometry g = conv_geometry(input.dim(0), input.dim(1), k, stride, padding);
  if (padding == Padding::Same) {
    const std::size_t padded_h = input.dim(0) + 2 * g.pad_top + 1;
    const std::size_t padded_w = input.dim(1) + 2 * g.pad_left + 1;
    if (k > padded_h || k > padded_w)
      throw std::invalid_argument("conv2d: kernel " + std::to_string(k) +
                                  " larger than padded input");
  }
  const Tensor col = im2col(input, k, stride, g);
  const Tensor flat = kernels.reshaped({k * k * kernels.dim(2), f});
  Tensor out = matmul(col, flat);
  double* po = out.data();
  const double* pb = bias.data();
  for (std::size_t i = 0; i < g.out_h * g.out_w; ++i)
    for (std::size_t j = 0; j < f; ++j) po[i * f + j] += pb[j];
  return out.reshaped({g.out_h, g.out_w, f});
}

struct PoolResult {
  Tensor out;                       // [H' x W' x C]
  std::vector<std::size_t> argmax;  // per output element, flat y*W+x of the winner
};

// Per-window maximum over a [H x W x C] input. Ties resolve to the first
// element in row-major window order, which keeps backward routing fixed.
inline PoolResult maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 3)
    throw std::invalid_argument("maxpool2d: input must be HxWxC, got " +
                                shape_str(input.shape()));
  if (window == 0 || stride == 0)
    throw std::invalid_argument("maxpool2d: window and stride must be positive");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (window > h || window > w)
    throw std::invalid_argument("maxpool2d: window " + std::to_string(window) +
                                " exceeds input " + shape_str(input.shape()));
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  PoolResult r{Tensor({oh, ow, c}), std::vector<std::size_t>(oh * ow * c, 0)};
  const double* src = input.data();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double best = -1e308;
        std::size_t best_pos = 0;
        for (std::size_t wy = 0; wy < window; ++wy) {
          const std::size_t iy = oy * stride + wy;
          for (std::size_t wx = 0; wx < window; ++wx) {
            const std::size_t ix = ox * stride + wx;
            const double v = src[(iy * w + ix) * c + ch];
            if (v > best) {
              best = v;
              best_pos = iy * w + ix;
            }
          }
        }
        r.out(oy, ox, ch) = best;
        r.argmax[(oy * ow + ox) * c + ch] = best_pos;
      }
    }
  }
  return r;
}

// Bilinear resize with corner-aligned sampling: source coordinate for output
// index i is i * (in-1)/(out-1), so the first and last samples land exactly
// on the first and last input pixels. A singleton output axis samples index 0.
inline Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  if (input.rank() != 3)
    throw std::invalid_argument("bilinear_resize: input must be HxWxC, got " +
                                shape_str(input.shape()));
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("bilinear_resize: zero target dimension");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  Tensor out({out_h, out_w, c});
  const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
  const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
  const double* src = input.data();
  double* dst = out.data();
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double fy = sy * static_cast<double>(oy);
    std::size_t y0 = static_cast<std::size_t>(fy);
    if (y0 >= h - 1) y0 = h - 1;
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double fx = sx * static_cast<double>(ox);
      std::size_t x0 = static_cast<std::size_t>(fx);
      if (x0 >= w - 1) x0 = w - 1;
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      const double* p00 = src + (y0 * w + x0) * c;
      const double* p01 = src + (y0 * w + x1) * c;
      const double* p10 = src + (y1 * w + x0) * c;
      const double* p11 = src + (y1 * w + x1) * c;
      double* po = dst + (oy * out_w + ox) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = p00[ch] + (p01[ch] - p00[ch]) * tx;
        const double bot = p10[ch] + (p11[ch] - p10[ch]) * tx;
        po[ch] = top + (bot - top) * ty;
      }
    }
  }
  return out;
}

// Zero-stuffing upsample by an integer factor: input values land at
// coordinates that are multiples of the factor, everything else is zero.
// The transpose of strided sampling; pairs with a trailing convolution to
// form a stride-f transposed convolution.
inline Tensor upsample_zero(const Tensor& input, std::size_t factor) {
  if (input.rank() != 3)
    throw std::invalid_argument("upsample_zero: input must be HxWxC");
  if (factor == 0) throw std::invalid_argument("upsample_zero: zero factor");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  Tensor out({h * factor, w * factor, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out(y * factor, x * factor, ch) = input(y, x, ch);
  return out;
}

// Backward of upsample_zero: pick the populated positions.
inline Tensor downsample_pick(const Tensor& grad, std::size_t factor, std::size_t h,
                              std::size_t w) {
  const std::size_t c = grad.dim(2);
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) out(y, x, ch) = grad(y * factor, x * factor, ch);
  return out;
}

}  // namespace dentnet
