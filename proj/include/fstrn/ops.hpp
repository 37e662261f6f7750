#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fstrn/common.hpp"
#include "fstrn/tensor.hpp"

namespace fstrn {

using std::int64_t;

// ===========================================================================
// conv3d: exact cross-correlation (no kernel flip), zero padding, 64-bit
// accumulation. Weight layout (out, in, kt, kh, kw).
// ===========================================================================

namespace kernels {

template <class T>
void conv3d_forward(const T* x, const Shape5& xs, const T* w, const T* bias,
                    const Conv3dSpec& sp, T* y, const Shape5& ys) {
  const int64_t kt = sp.kernel[0], kh = sp.kernel[1], kw = sp.kernel[2];
  const int64_t st = sp.stride[0], sh = sp.stride[1], sw = sp.stride[2];
  const int64_t pt = sp.padding[0], ph = sp.padding[1], pw = sp.padding[2];
  const int64_t rows = ys.n * ys.c * ys.t;

  parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      const int64_t ot = row % ys.t;
      const int64_t co = (row / ys.t) % ys.c;
      const int64_t n = row / (ys.t * ys.c);
      const int64_t it0 = ot * st - pt;
      const int64_t dtlo = std::max<int64_t>(0, -it0);
      const int64_t dthi = std::min<int64_t>(kt - 1, xs.t - 1 - it0);
      T* yrow = y + ((row * ys.h) * ys.w);
      const double b = bias ? static_cast<double>(bias[co]) : 0.0;
      for (int64_t oy = 0; oy < ys.h; ++oy) {
        const int64_t iy0 = oy * sh - ph;
        const int64_t dylo = std::max<int64_t>(0, -iy0);
        const int64_t dyhi = std::min<int64_t>(kh - 1, xs.h - 1 - iy0);
        for (int64_t ox = 0; ox < ys.w; ++ox) {
          const int64_t ix0 = ox * sw - pw;
          const int64_t dxlo = std::max<int64_t>(0, -ix0);
          const int64_t dxhi = std::min<int64_t>(kw - 1, xs.w - 1 - ix0);
          double acc = b;
          for (int64_t ci = 0; ci < xs.c; ++ci) {
            const T* xc = x + (((n * xs.c + ci) * xs.t) * xs.h) * xs.w;
            const T* wc = w + (((co * xs.c + ci) * kt) * kh) * kw;
            for (int64_t dt = dtlo; dt <= dthi; ++dt) {
              const T* xt = xc + (it0 + dt) * xs.h * xs.w;
              const T* wt = wc + dt * kh * kw;
              for (int64_t dy = dylo; dy <= dyhi; ++dy) {
                const T* xr = xt + (iy0 + dy) * xs.w + ix0;
                const T* wr = wt + dy * kw;
                for (int64_t dx = dxlo; dx <= dxhi; ++dx)
                  acc += static_cast<double>(wr[dx]) * static_cast<double>(xr[dx]);
              }
            }
          }
          yrow[oy * ys.w + ox] = static_cast<T>(acc);
        }
      }
    }
  }, 1);
}

// Gradient w.r.t. the input, computed as a gather per input voxel so parallel
// chunks never write the same element.
template <class T>
void conv3d_backward_data(const T* gy, const Shape5& ys, const T* w, const Conv3dSpec& sp,
                          T* gx, const Shape5& xs) {
  const int64_t kt = sp.kernel[0], kh = sp.kernel[1], kw = sp.kernel[2];
  const int64_t st = sp.stride[0], sh = sp.stride[1], sw = sp.stride[2];
  const int64_t pt = sp.padding[0], ph = sp.padding[1], pw = sp.padding[2];
  const int64_t kvol = kt * kh * kw;
  const int64_t rows = xs.n * xs.c * xs.t;

  parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      const int64_t it = row % xs.t;
      const int64_t ci = (row / xs.t) % xs.c;
      const int64_t n = row / (xs.t * xs.c);
      T* gxrow = gx + row * xs.h * xs.w;
      for (int64_t iy = 0; iy < xs.h; ++iy) {
        for (int64_t ix = 0; ix < xs.w; ++ix) {
          double acc = 0.0;
          for (int64_t dt = 0; dt < kt; ++dt) {
            const int64_t tt = it + pt - dt;
            if (tt < 0 || tt % st) continue;
            const int64_t ot = tt / st;
            if (ot >= ys.t) continue;
            for (int64_t dy = 0; dy < kh; ++dy) {
              const int64_t ty = iy + ph - dy;
              if (ty < 0 || ty % sh) continue;
              const int64_t oy = ty / sh;
              if (oy >= ys.h) continue;
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t tx = ix + pw - dx;
                if (tx < 0 || tx % sw) continue;
                const int64_t ox = tx / sw;
                if (ox >= ys.w) continue;
                const int64_t koff = (dt * kh + dy) * kw + dx;
                for (int64_t co = 0; co < ys.c; ++co) {
                  const T wv = w[(co * xs.c + ci) * kvol + koff];
                  const T gv = gy[((((n * ys.c + co) * ys.t + ot) * ys.h + oy) * ys.w) + ox];
                  acc += static_cast<double>(wv) * static_cast<double>(gv);
                }
              }
            }
          }
          gxrow[iy * xs.w + ix] += static_cast<T>(acc);
        }
      }
    }
  }, 1);
}

template <class T>
void conv3d_backward_weights(const T* gy, const Shape5& ys, const T* x, const Shape5& xs,
                             const Conv3dSpec& sp, T* gw, T* gbias) {
  const int64_t kt = sp.kernel[0], kh = sp.kernel[1], kw = sp.kernel[2];
  const int64_t st = sp.stride[0], sh = sp.stride[1], sw = sp.stride[2];
  const int64_t pt = sp.padding[0], ph = sp.padding[1], pw = sp.padding[2];
  const int64_t kvol = kt * kh * kw;

  parallel_for(0, ys.c, [&](int64_t lo, int64_t hi) {
    for (int64_t co = lo; co < hi; ++co) {
      if (gbias) {
        double acc = 0.0;
        for (int64_t n = 0; n < ys.n; ++n) {
          const T* g = gy + ((n * ys.c + co) * ys.t) * ys.h * ys.w;
          const int64_t cnt = ys.t * ys.h * ys.w;
          for (int64_t i = 0; i < cnt; ++i) acc += static_cast<double>(g[i]);
        }
        gbias[co] += static_cast<T>(acc);
      }
      for (int64_t ci = 0; ci < xs.c; ++ci) {
        for (int64_t dt = 0; dt < kt; ++dt) {
          // output ranges whose taps stay inside the unpadded input
          const int64_t otlo = std::max<int64_t>(0, (pt - dt + st - 1) / st);
          const int64_t othi = std::min<int64_t>(ys.t - 1, (xs.t - 1 + pt - dt) / st);
          for (int64_t dy = 0; dy < kh; ++dy) {
            const int64_t oylo = std::max<int64_t>(0, (ph - dy + sh - 1) / sh);
            const int64_t oyhi = std::min<int64_t>(ys.h - 1, (xs.h - 1 + ph - dy) / sh);
            for (int64_t dx = 0; dx < kw; ++dx) {
              const int64_t oxlo = std::max<int64_t>(0, (pw - dx + sw - 1) / sw);
              const int64_t oxhi = std::min<int64_t>(ys.w - 1, (xs.w - 1 + pw - dx) / sw);
              double acc = 0.0;
              for (int64_t n = 0; n < ys.n; ++n) {
                const T* gc = gy + ((n * ys.c + co) * ys.t) * ys.h * ys.w;
                const T* xc = x + ((n * xs.c + ci) * xs.t) * xs.h * xs.w;
                for (int64_t ot = otlo; ot <= othi; ++ot) {
                  const T* gt = gc + ot * ys.h * ys.w;
                  const T* xt = xc + (ot * st + dt - pt) * xs.h * xs.w;
                  for (int64_t oy = oylo; oy <= oyhi; ++oy) {
                    const T* gr = gt + oy * ys.w;
                    const T* xr = xt + (oy * sh + dy - ph) * xs.w + (dx - pw);
                    for (int64_t ox = oxlo; ox <= oxhi; ++ox)
                      acc += static_cast<double>(gr[ox]) * static_cast<double>(xr[ox * sw]);
                  }
                }
              }
              gw[(co * xs.c + ci) * kvol + (dt * kh + dy) * kw + dx] += static_cast<T>(acc);
            }
          }
        }
      }
    }
  }, 1);
}

// Transposed convolution, gather form: out[z] sums taps with
// in = (z + p - d) / s where the division is exact.
template <class T>
void deconv3d_forward(const T* x, const Shape5& xs, const T* w, const T* bias,
                      const Conv3dSpec& sp, T* y, const Shape5& ys) {
  const int64_t kt = sp.kernel[0], kh = sp.kernel[1], kw = sp.kernel[2];
  const int64_t st = sp.stride[0], sh = sp.stride[1], sw = sp.stride[2];
  const int64_t pt = sp.padding[0], ph = sp.padding[1], pw = sp.padding[2];
  const int64_t kvol = kt * kh * kw;
  const int64_t rows = ys.n * ys.c * ys.t;

  parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      const int64_t zt = row % ys.t;
      const int64_t co = (row / ys.t) % ys.c;
      const int64_t n = row / (ys.t * ys.c);
      T* yrow = y + row * ys.h * ys.w;
      const double b = bias ? static_cast<double>(bias[co]) : 0.0;
      for (int64_t zy = 0; zy < ys.h; ++zy) {
        for (int64_t zx = 0; zx < ys.w; ++zx) {
          double acc = b;
          for (int64_t dt = 0; dt < kt; ++dt) {
            const int64_t tt = zt + pt - dt;
            if (tt < 0 || tt % st) continue;
            const int64_t it = tt / st;
            if (it >= xs.t) continue;
            for (int64_t dy = 0; dy < kh; ++dy) {
              const int64_t ty = zy + ph - dy;
              if (ty < 0 || ty % sh) continue;
              const int64_t iy = ty / sh;
              if (iy >= xs.h) continue;
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t tx = zx + pw - dx;
                if (tx < 0 || tx % sw) continue;
                const int64_t ix = tx / sw;
                if (ix >= xs.w) continue;
                const int64_t koff = (dt * kh + dy) * kw + dx;
                for (int64_t ci = 0; ci < xs.c; ++ci) {
                  const T wv = w[(co * xs.c + ci) * kvol + koff];
                  const T xv = x[((((n * xs.c + ci) * xs.t + it) * xs.h + iy) * xs.w) + ix];
                  acc += static_cast<double>(wv) * static_cast<double>(xv);
                }
              }
            }
          }
          yrow[zy * ys.w + zx] = static_cast<T>(acc);
        }
      }
    }
  }, 1);
}

// Adjoint of the gather above is a conv3d-style stencil over the output grad.
template <class T>
void deconv3d_backward_data(const T* gy, const Shape5& ys, const T* w, const Conv3dSpec& sp,
                            T* gx, const Shape5& xs) {
  const int64_t kt = sp.kernel[0], kh = sp.kernel[1], kw = sp.kernel[2];
  const int64_t st = sp.stride[0], sh = sp.stride[1], sw = sp.stride[2];
  const int64_t pt = sp.padding[0], ph = sp.padding[1], pw = sp.padding[2];
  const int64_t kvol = kt * kh * kw;
  const int64_t rows = xs.n * xs.c * xs.t;

  parallel_for(0, rows, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      const int64_t it = row % xs.t;
      const int64_t ci = (row / xs.t) % xs.c;
      const int64_t n = row / (xs.t * xs.c);
      const int64_t zt0 = it * st - pt;
      const int64_t dtlo = std::max<int64_t>(0, -zt0);
      const int64_t dthi = std::min<int64_t>(kt - 1, ys.t - 1 - zt0);
      T* gxrow = gx + row * xs.h * xs.w;
      for (int64_t iy = 0; iy < xs.h; ++iy) {
        const int64_t zy0 = iy * sh - ph;
        const int64_t dylo = std::max<int64_t>(0, -zy0);
        const int64_t dyhi = std::min<int64_t>(kh - 1, ys.h - 1 - zy0);
        for (int64_t ix = 0; ix < xs.w; ++ix) {
          const int64_t zx0 = ix * sw - pw;
          const int64_t dxlo = std::max<int64_t>(0, -zx0);
          const int64_t dxhi = std::min<int64_t>(kw - 1, ys.w - 1 - zx0);
          double acc = 0.0;
          for (int64_t co = 0; co < ys.c; ++co) {
            const T* gc = gy + ((n * ys.c + co) * ys.t) * ys.h * ys.w;
            const T* wc = w + (co * xs.c + ci) * kvol;
            for (int64_t dt = dtlo; dt <= dthi; ++dt) {
              const T* gt = gc + (zt0 + dt) * ys.h * ys.w;
              const T* wt = wc + dt * kh * kw;
              for (int64_t dy = dylo; dy <= dyhi; ++dy) {
                const T* gr = gt + (zy0 + dy) * ys.w + zx0;
                const T* wr = wt + dy * kw;
                for (int64_t dx = dxlo; dx <= dxhi; ++dx)
                  acc += static_cast<double>(wr[dx]) * static_cast<double>(gr[dx]);
              }
            }
          }
          gxrow[iy * xs.w + ix] += static_cast<T>(acc);
        }
      }
    }
  }, 1);
}

template <class T>
void deconv3d_backward_weights(const T* gy, const Shape5& ys, const T* x, const Shape5& xs,
                               const Conv3dSpec& sp, T* gw, T* gbias) {
  const int64_t kt = sp.kernel[0], kh = sp.kernel[1], kw = sp.kernel[2];
  const int64_t st = sp.stride[0], sh = sp.stride[1], sw = sp.stride[2];
  const int64_t pt = sp.padding[0], ph = sp.padding[1], pw = sp.padding[2];
  const int64_t kvol = kt * kh * kw;

  parallel_for(0, ys.c, [&](int64_t lo, int64_t hi) {
    for (int64_t co = lo; co < hi; ++co) {
      if (gbias) {
        double acc = 0.0;
        for (int64_t n = 0; n < ys.n; ++n) {
          const T* g = gy + ((n * ys.c + co) * ys.t) * ys.h * ys.w;
          const int64_t cnt = ys.t * ys.h * ys.w;
          for (int64_t i = 0; i < cnt; ++i) acc += static_cast<double>(g[i]);
        }
        gbias[co] += static_cast<T>(acc);
      }
      for (int64_t ci = 0; ci < xs.c; ++ci) {
        for (int64_t dt = 0; dt < kt; ++dt) {
          for (int64_t dy = 0; dy < kh; ++dy) {
            for (int64_t dx = 0; dx < kw; ++dx) {
              double acc = 0.0;
              for (int64_t n = 0; n < xs.n; ++n) {
                const T* xc = x + ((n * xs.c + ci) * xs.t) * xs.h * xs.w;
                const T* gc = gy + ((n * ys.c + co) * ys.t) * ys.h * ys.w;
                for (int64_t it = 0; it < xs.t; ++it) {
                  const int64_t zt = it * st + dt - pt;
                  if (zt < 0 || zt >= ys.t) continue;
                  for (int64_t iy = 0; iy < xs.h; ++iy) {
                    const int64_t zy = iy * sh + dy - ph;
                    if (zy < 0 || zy >= ys.h) continue;
                    const T* xr = xc + (it * xs.h + iy) * xs.w;
                    const T* gr = gc + (zt * ys.h + zy) * ys.w;
                    for (int64_t ix = 0; ix < xs.w; ++ix) {
                      const int64_t zx = ix * sw + dx - pw;
                      if (zx < 0 || zx >= ys.w) continue;
                      acc += static_cast<double>(xr[ix]) * static_cast<double>(gr[zx]);
                    }
                  }
                }
              }
              gw[(co * xs.c + ci) * kvol + (dt * kh + dy) * kw + dx] += static_cast<T>(acc);
            }
          }
        }
      }
    }
  }, 1);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Op-level API. Forward returns a fresh tensor; backward routines accumulate
// into the .grad buffers of their arguments.
// ---------------------------------------------------------------------------

template <class T>
Shape5 conv3d_output_shape(const Shape5& xs, const Conv3dSpec& sp, const TensorT<T>* weights) {
  sp.validate();
  if (xs.c != sp.in_channels)
    throw DimensionError("conv3d: input has " + std::to_string(xs.c) +
                         " channels, spec expects " + std::to_string(sp.in_channels) +
                         " (axis c)");
  if (weights) {
    Shape5 want{sp.out_channels, sp.in_channels, sp.kernel[0], sp.kernel[1], sp.kernel[2]};
    if (weights->shape != want)
      throw DimensionError("conv3d: weight shape " + weights->shape.str() + " != spec " +
                           want.str());
  }
  auto od = sp.out_dims({xs.t, xs.h, xs.w});
  return Shape5{xs.n, sp.out_channels, od[0], od[1], od[2]};
}

template <class T>
TensorT<T> conv3d(const TensorT<T>& x, const LayerParamsT<T>& p, const Conv3dSpec& sp) {
  Shape5 ys = conv3d_output_shape(x.shape, sp, &p.weights);
  require_finite(x, "conv3d");
  require_finite(p.weights, "conv3d(weights)");
  if (p.has_bias()) {
    if (p.bias.numel() != sp.out_channels)
      throw DimensionError("conv3d: bias length " + std::to_string(p.bias.numel()) +
                           " != out_channels (axis c)");
    require_finite(p.bias, "conv3d(bias)");
  }
  TensorT<T> y(ys);
  kernels::conv3d_forward(x.data.data(), x.shape, p.weights.data.data(),
                          p.has_bias() ? p.bias.data.data() : nullptr, sp, y.data.data(), ys);
  return y;
}

// Accumulates into x.grad (when grad_x true), p.weights.grad, p.bias.grad.
template <class T>
void conv3d_backward(const TensorT<T>& grad_out, const TensorT<T>& x, LayerParamsT<T>& p,
                     const Conv3dSpec& sp, TensorT<T>& x_mut, bool grad_x = true) {
  if (grad_x) {
    x_mut.ensure_grad();
    kernels::conv3d_backward_data(grad_out.data.data(), grad_out.shape, p.weights.data.data(),
                                  sp, x_mut.grad.data(), x.shape);
  }
  p.weights.ensure_grad();
  if (p.has_bias()) p.bias.ensure_grad();
  kernels::conv3d_backward_weights(grad_out.data.data(), grad_out.shape, x.data.data(), x.shape,
                                   sp, p.weights.grad.data(),
                                   p.has_bias() ? p.bias.grad.data() : nullptr);
}

inline void validate_deconv_spec(const Conv3dSpec& sp) {
  sp.validate();
  if (sp.kernel[0] != 1 || sp.stride[0] != 1 || sp.padding[0] != 0)
    throw ConfigError("deconv3d preserves the temporal axis: kernel/stride/padding must be 1/1/0 on t");
  if (sp.kernel[1] != sp.stride[1] + 2 * sp.padding[1] ||
      sp.kernel[2] != sp.stride[2] + 2 * sp.padding[2])
    throw ConfigError("deconv3d spec does not yield an exact multiple upscale (need k == s + 2p)");
}

template <class T>
Shape5 deconv3d_output_shape(const Shape5& xs, const Conv3dSpec& sp) {
  validate_deconv_spec(sp);
  if (xs.c != sp.in_channels)
    throw DimensionError("deconv3d: input has " + std::to_string(xs.c) +
                         " channels, spec expects " + std::to_string(sp.in_channels) +
                         " (axis c)");
  auto od = sp.deconv_out_dims({xs.t, xs.h, xs.w});
  return Shape5{xs.n, sp.out_channels, od[0], od[1], od[2]};
}

template <class T>
TensorT<T> deconv3d(const TensorT<T>& x, const LayerParamsT<T>& p, const Conv3dSpec& sp) {
  Shape5 ys = deconv3d_output_shape<T>(x.shape, sp);
  Shape5 want{sp.out_channels, sp.in_channels, sp.kernel[0], sp.kernel[1], sp.kernel[2]};
  if (p.weights.shape != want)
    throw DimensionError("deconv3d: weight shape " + p.weights.shape.str() + " != spec " +
                         want.str());
  require_finite(x, "deconv3d");
  require_finite(p.weights, "deconv3d(weights)");
  if (p.has_bias()) require_finite(p.bias, "deconv3d(bias)");
  TensorT<T> y(ys);
  kernels::deconv3d_forward(x.data.data(), x.shape, p.weights.data.data(),
                            p.has_bias() ? p.bias.data.data() : nullptr, sp, y.data.data(), ys);
  return y;
}

template <class T>
void deconv3d_backward(const TensorT<T>& grad_out, const TensorT<T>& x, LayerParamsT<T>& p,
                       const Conv3dSpec& sp, TensorT<T>& x_mut, bool grad_x = true) {
  if (grad_x) {
    x_mut.ensure_grad();
    kernels::deconv3d_backward_data(grad_out.data.data(), grad_out.shape, p.weights.data.data(),
                                    sp, x_mut.grad.data(), x.shape);
  }
  p.weights.ensure_grad();
  if (p.has_bias()) p.bias.ensure_grad();
  kernels::deconv3d_backward_weights(grad_out.data.data(), grad_out.shape, x.data.data(),
                                     x.shape, sp, p.weights.grad.data(),
                                     p.has_bias() ? p.bias.grad.data() : nullptr);
}

// ===========================================================================
// PReLU with per-channel learned slopes.
// ===========================================================================

template <class T>
TensorT<T> prelu(const TensorT<T>& x, const TensorT<T>& slope) {
  if (slope.numel() != x.shape.c)
    throw DimensionError("prelu: slope length " + std::to_string(slope.numel()) +
                         " != channel count " + std::to_string(x.shape.c) + " (axis c)");
  require_finite(x, "prelu");
  require_finite(slope, "prelu(slope)");
  TensorT<T> y(x.shape);
  const int64_t inner = x.shape.t * x.shape.h * x.shape.w;
  parallel_for(0, x.shape.n * x.shape.c, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      const T a = slope.data[row % x.shape.c];
      const T* xin = x.data.data() + row * inner;
      T* yout = y.data.data() + row * inner;
      for (int64_t i = 0; i < inner; ++i) yout[i] = xin[i] >= T(0) ? xin[i] : a * xin[i];
    }
  });
  return y;
}

template <class T>
void prelu_backward(const TensorT<T>& grad_out, const TensorT<T>& x, TensorT<T>& x_mut,
                    TensorT<T>& slope, bool grad_x = true) {
  slope.ensure_grad();
  if (grad_x) x_mut.ensure_grad();
  const int64_t inner = x.shape.t * x.shape.h * x.shape.w;
  // slope grads are reduced serially per channel to keep accumulation order fixed
  for (int64_t row = 0; row < x.shape.n * x.shape.c; ++row) {
    const int64_t c = row % x.shape.c;
    const T a = slope.data[c];
    const T* xin = x.data.data() + row * inner;
    const T* g = grad_out.data.data() + row * inner;
    double ga = 0.0;
    T* gx = grad_x ? x_mut.grad.data() + row * inner : nullptr;
    for (int64_t i = 0; i < inner; ++i) {
      if (xin[i] >= T(0)) {
        if (gx) gx[i] += g[i];
      } else {
        if (gx) gx[i] += a * g[i];
        ga += static_cast<double>(g[i]) * static_cast<double>(xin[i]);
      }
    }
    slope.grad[c] += static_cast<T>(ga);
  }
}

// ===========================================================================
// Inverted dropout. The mask holds 0 or 1/(1-rate); eval mode is identity.
// ===========================================================================

template <class T>
TensorT<T> dropout(const TensorT<T>& x, double rate, bool training, Rng& rng,
                   std::vector<T>* mask_out = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  require_finite(x, "dropout");
  if (!training || rate == 0.0) {
    if (mask_out) mask_out->assign(x.data.size(), T(1));
    return x;
  }
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  TensorT<T> y(x.shape);
  if (mask_out) mask_out->assign(x.data.size(), T(0));
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    if (rng.uniform() >= rate) {
      y.data[i] = x.data[i] * scale;
      if (mask_out) (*mask_out)[i] = scale;
    }
  }
  return y;
}

template <class T>
void dropout_backward(const TensorT<T>& grad_out, const std::vector<T>& mask, TensorT<T>& x_mut) {
  x_mut.ensure_grad();
  for (std::size_t i = 0; i < mask.size(); ++i) x_mut.grad[i] += grad_out.data[i] * mask[i];
}

// ===========================================================================
// Elementwise sum with gradient fan-out.
// ===========================================================================

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape)
    throw DimensionError("add: shapes " + a.shape.str() + " and " + b.shape.str() + " differ");
  require_finite(a, "add(lhs)");
  require_finite(b, "add(rhs)");
  TensorT<T> y(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
  return y;
}

// ===========================================================================
// Spatial resampling. Separable taps; all modes preserve constants exactly
// (weights sum to 1). Out-of-frame samples replicate the edge pixel.
// ===========================================================================

enum class ResizeMode { bilinear, nearest, bicubic, area };

inline ResizeMode parse_resize_mode(const std::string& s) {
  if (s == "bilinear") return ResizeMode::bilinear;
  if (s == "nearest") return ResizeMode::nearest;
  if (s == "bicubic") return ResizeMode::bicubic;
  if (s == "area") return ResizeMode::area;
  throw ConfigError("unknown interpolation mode '" + s + "'");
}

inline const char* resize_mode_name(ResizeMode m) {
  switch (m) {
    case ResizeMode::bilinear: return "bilinear";
    case ResizeMode::nearest: return "nearest";
    case ResizeMode::bicubic: return "bicubic";
    case ResizeMode::area: return "area";
  }
  return "?";
}

namespace kernels {

struct ResampleTap {
  int64_t first = 0;
  std::vector<double> w;
};

// Catmull-Rom cubic, a = -0.5
inline double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

inline std::vector<ResampleTap> build_axis_taps(int64_t in, int64_t out, ResizeMode mode) {
  std::vector<ResampleTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t j = 0; j < out; ++j) {
    ResampleTap& tp = taps[static_cast<std::size_t>(j)];
    switch (mode) {
      case ResizeMode::nearest: {
        int64_t src = static_cast<int64_t>(std::floor((static_cast<double>(j) + 0.5) * ratio));
        tp.first = std::clamp<int64_t>(src, 0, in - 1);
        tp.w = {1.0};
        break;
      }
      case ResizeMode::bilinear: {
        double pos = (static_cast<double>(j) + 0.5) * ratio - 0.5;
        int64_t i0 = static_cast<int64_t>(std::floor(pos));
        double f = pos - static_cast<double>(i0);
        tp.first = i0;
        tp.w = {1.0 - f, f};
        break;
      }
      case ResizeMode::bicubic: {
        double pos = (static_cast<double>(j) + 0.5) * ratio - 0.5;
        int64_t i0 = static_cast<int64_t>(std::floor(pos));
        double f = pos - static_cast<double>(i0);
        tp.first = i0 - 1;
        tp.w = {cubic_weight(f + 1.0), cubic_weight(f), cubic_weight(1.0 - f),
                cubic_weight(2.0 - f)};
        break;
      }
      case ResizeMode::area: {
        double lo = static_cast<double>(j) * ratio;
        double hi = static_cast<double>(j + 1) * ratio;
        int64_t ilo = static_cast<int64_t>(std::floor(lo));
        int64_t ihi = std::min<int64_t>(in - 1, static_cast<int64_t>(std::ceil(hi)) - 1);
        tp.first = ilo;
        double total = 0.0;
        for (int64_t i = ilo; i <= ihi; ++i) {
          double overlap = std::min(hi, static_cast<double>(i + 1)) -
                           std::max(lo, static_cast<double>(i));
          overlap = std::max(overlap, 0.0);
          tp.w.push_back(overlap);
          total += overlap;
        }
        for (double& v : tp.w) v /= total;
        break;
      }
    }
    // fold out-of-range taps onto the clamped edge sample
    ResampleTap folded;
    folded.first = std::clamp<int64_t>(tp.first, 0, in - 1);
    int64_t last = std::clamp<int64_t>(tp.first + static_cast<int64_t>(tp.w.size()) - 1, 0, in - 1);
    folded.w.assign(static_cast<std::size_t>(last - folded.first + 1), 0.0);
    for (std::size_t k = 0; k < tp.w.size(); ++k) {
      int64_t idx = std::clamp<int64_t>(tp.first + static_cast<int64_t>(k), 0, in - 1);
      folded.w[static_cast<std::size_t>(idx - folded.first)] += tp.w[k];
    }
    tp = std::move(folded);
  }
  return taps;
}

// Transpose of a tap table: in -> list of (out, weight)
inline std::vector<ResampleTap> transpose_taps(const std::vector<ResampleTap>& taps, int64_t in) {
  std::vector<ResampleTap> adj(static_cast<std::size_t>(in));
  std::vector<std::vector<std::pair<int64_t, double>>> sparse(static_cast<std::size_t>(in));
  for (int64_t j = 0; j < static_cast<int64_t>(taps.size()); ++j) {
    const ResampleTap& tp = taps[static_cast<std::size_t>(j)];
    for (std::size_t k = 0; k < tp.w.size(); ++k)
      sparse[static_cast<std::size_t>(tp.first + static_cast<int64_t>(k))].emplace_back(j, tp.w[k]);
  }
  for (int64_t i = 0; i < in; ++i) {
    auto& row = sparse[static_cast<std::size_t>(i)];
    if (row.empty()) {
      adj[static_cast<std::size_t>(i)].first = 0;
      continue;
    }
    int64_t lo = row.front().first, hi = row.back().first;
    adj[static_cast<std::size_t>(i)].first = lo;
    adj[static_cast<std::size_t>(i)].w.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
    for (auto& [j, wv] : row) adj[static_cast<std::size_t>(i)].w[static_cast<std::size_t>(j - lo)] += wv;
  }
  return adj;
}

// Separable plane resample: rows by ytaps then columns by xtaps.
template <class T>
void resample_plane(const T* in, int64_t ih, int64_t iw, T* out, int64_t oh, int64_t ow,
                    const std::vector<ResampleTap>& ytaps, const std::vector<ResampleTap>& xtaps,
                    std::vector<double>& scratch) {
  scratch.resize(static_cast<std::size_t>(oh * iw));
  for (int64_t oy = 0; oy < oh; ++oy) {
    const ResampleTap& tp = ytaps[static_cast<std::size_t>(oy)];
    double* dst = scratch.data() + oy * iw;
    std::fill(dst, dst + iw, 0.0);
    for (std::size_t k = 0; k < tp.w.size(); ++k) {
      const T* src = in + (tp.first + static_cast<int64_t>(k)) * iw;
      const double wv = tp.w[k];
      for (int64_t x = 0; x < iw; ++x) dst[x] += wv * static_cast<double>(src[x]);
    }
  }
  for (int64_t oy = 0; oy < oh; ++oy) {
    const double* row = scratch.data() + oy * iw;
    T* dst = out + oy * ow;
    for (int64_t ox = 0; ox < ow; ++ox) {
      const ResampleTap& tp = xtaps[static_cast<std::size_t>(ox)];
      double acc = 0.0;
      for (std::size_t k = 0; k < tp.w.size(); ++k)
        acc += tp.w[k] * row[tp.first + static_cast<int64_t>(k)];
      dst[ox] = static_cast<T>(acc);
    }
  }
}

}  // namespace kernels

template <class T>
void resample_plane(const T* in, int64_t ih, int64_t iw, T* out, int64_t oh, int64_t ow,
                    ResizeMode mode) {
  auto ytaps = kernels::build_axis_taps(ih, oh, mode);
  auto xtaps = kernels::build_axis_taps(iw, ow, mode);
  std::vector<double> scratch;
  kernels::resample_plane(in, ih, iw, out, oh, ow, ytaps, xtaps, scratch);
}

template <class T>
TensorT<T> resize_spatial(const TensorT<T>& x, int64_t scale, ResizeMode mode) {
  if (scale < 1) throw ConfigError("resize_spatial: scale must be >= 1");
  require_finite(x, "resize_spatial");
  Shape5 ys{x.shape.n, x.shape.c, x.shape.t, x.shape.h * scale, x.shape.w * scale};
  TensorT<T> y(ys);
  auto ytaps = kernels::build_axis_taps(x.shape.h, ys.h, mode);
  auto xtaps = kernels::build_axis_taps(x.shape.w, ys.w, mode);
  const int64_t frames = x.shape.n * x.shape.c * x.shape.t;
  parallel_for(0, frames, [&](int64_t lo, int64_t hi) {
    std::vector<double> scratch;
    for (int64_t f = lo; f < hi; ++f)
      kernels::resample_plane(x.data.data() + f * x.shape.h * x.shape.w, x.shape.h, x.shape.w,
                              y.data.data() + f * ys.h * ys.w, ys.h, ys.w, ytaps, xtaps, scratch);
  }, 1);
  return y;
}

// Pass-through gradient: the resampler is linear in x, so the backward map is
// its adjoint (transposed tap tables applied to the output gradient).
template <class T>
void resize_spatial_backward(const TensorT<T>& grad_out, TensorT<T>& x_mut, int64_t scale,
                             ResizeMode mode) {
  x_mut.ensure_grad();
  const Shape5& xs = x_mut.shape;
  const Shape5& ys = grad_out.shape;
  auto ytaps = kernels::transpose_taps(kernels::build_axis_taps(xs.h, ys.h, mode), xs.h);
  auto xtaps = kernels::transpose_taps(kernels::build_axis_taps(xs.w, ys.w, mode), xs.w);
  const int64_t frames = xs.n * xs.c * xs.t;
  parallel_for(0, frames, [&](int64_t lo, int64_t hi) {
    std::vector<double> scratch;
    std::vector<T> partial(static_cast<std::size_t>(xs.h * xs.w));
    for (int64_t f = lo; f < hi; ++f) {
      kernels::resample_plane(grad_out.data.data() + f * ys.h * ys.w, ys.h, ys.w, partial.data(),
                              xs.h, xs.w, ytaps, xtaps, scratch);
      T* gx = x_mut.grad.data() + f * xs.h * xs.w;
      for (std::size_t i = 0; i < partial.size(); ++i) gx[i] += partial[i];
    }
  }, 1);
}

}  // namespace fstrn
