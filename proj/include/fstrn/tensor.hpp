#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fstrn/common.hpp"

namespace fstrn {

// Rank-5 shape in (batch, channel, time, height, width) order.
struct Shape5 {
  std::int64_t n = 1, c = 1, t = 1, h = 1, w = 1;

  std::int64_t numel() const { return n * c * t * h * w; }

  bool operator==(const Shape5& o) const {
    return n == o.n && c == o.c && t == o.t && h == o.h && w == o.w;
  }
  bool operator!=(const Shape5& o) const { return !(*this == o); }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(t) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }

  // 1-d parameter buffers (bias, PReLU slopes) live in the channel slot.
  static Shape5 vec(std::int64_t len) { return Shape5{1, len, 1, 1, 1}; }
};

// Dense rank-5 tensor, row-major (n,c,t,h,w). `grad`, when non-empty, is a
// congruent accumulation buffer.
template <class T>
struct TensorT {
  Shape5 shape;
  std::vector<T> data;
  std::vector<T> grad;

  TensorT() = default;
  explicit TensorT(Shape5 s) : shape(s), data(static_cast<std::size_t>(s.numel()), T(0)) {}
  TensorT(Shape5 s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != s.numel())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " != shape product " + std::to_string(s.numel()));
  }

  std::int64_t numel() const { return shape.numel(); }
  bool empty() const { return data.empty(); }

  T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>(
        (((n * shape.c + c) * shape.t + t) * shape.h + y) * shape.w + x)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t t, std::int64_t y,
              std::int64_t x) const {
    return data[static_cast<std::size_t>(
        (((n * shape.c + c) * shape.t + t) * shape.h + y) * shape.w + x)];
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using VideoTensor = TensorT<float>;

template <class T>
void require_finite(const TensorT<T>& x, const char* who) {
  if (!all_finite(x.data))
    throw NumericError(std::string(who) + ": non-finite value in input tensor");
}

// 3-d convolution geometry. Kernel/stride/padding are (t, h, w) triples.
struct Conv3dSpec {
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};
  bool bias = true;

  void validate() const {
    const char* axes = "thw";
    for (int a = 0; a < 3; ++a) {
      if (kernel[a] < 1)
        throw ConfigError(std::string("conv kernel must be positive on axis ") + axes[a]);
      if (stride[a] < 1)
        throw ConfigError(std::string("conv stride must be positive on axis ") + axes[a]);
      if (padding[a] < 0)
        throw ConfigError(std::string("conv padding must be non-negative on axis ") + axes[a]);
    }
    if (in_channels < 1 || out_channels < 1)
      throw ConfigError("conv channel counts must be positive");
  }

  std::int64_t weight_count() const {
    return out_channels * in_channels * kernel[0] * kernel[1] * kernel[2];
  }

  // floor((in + 2p - k) / s) + 1 per axis
  std::array<std::int64_t, 3> out_dims(std::array<std::int64_t, 3> in) const {
    std::array<std::int64_t, 3> out{};
    const char* axes = "thw";
    for (int a = 0; a < 3; ++a) {
      std::int64_t span = in[a] + 2 * padding[a] - kernel[a];
      if (span < 0)
        throw DimensionError(std::string("conv kernel exceeds padded input on axis ") + axes[a]);
      out[a] = span / stride[a] + 1;
    }
    return out;
  }

  // transposed-conv output: (in - 1) * s - 2p + k per axis
  std::array<std::int64_t, 3> deconv_out_dims(std::array<std::int64_t, 3> in) const {
    std::array<std::int64_t, 3> out{};
    const char* axes = "thw";
    for (int a = 0; a < 3; ++a) {
      out[a] = (in[a] - 1) * stride[a] - 2 * padding[a] + kernel[a];
      if (out[a] < 1)
        throw DimensionError(std::string("deconv output collapses on axis ") + axes[a]);
    }
    return out;
  }
};

// Learnable weights for one conv/deconv layer. Weight shape is
// (out_channels, in_channels, kt, kh, kw) stored in the Shape5 slots in that
// order; bias and prelu_slope are per-channel vectors when present.
template <class T>
struct LayerParamsT {
  TensorT<T> weights;
  TensorT<T> bias;
  TensorT<T> prelu_slope;

  bool has_bias() const { return !bias.empty(); }

  std::int64_t param_count() const {
    return static_cast<std::int64_t>(weights.data.size() + bias.data.size() +
                                     prelu_slope.data.size());
  }

  void zero_grads() {
    weights.zero_grad();
    bias.zero_grad();
    prelu_slope.zero_grad();
  }

  template <class U>
  LayerParamsT<U> cast() const {
    LayerParamsT<U> out;
    out.weights = weights.template cast<U>();
    out.bias = bias.template cast<U>();
    out.prelu_slope = prelu_slope.template cast<U>();
    return out;
  }
};

using LayerParams = LayerParamsT<float>;

template <class T>
LayerParamsT<T> make_conv_params(const Conv3dSpec& spec, Rng& rng) {
  spec.validate();
  LayerParamsT<T> p;
  p.weights = TensorT<T>(Shape5{spec.out_channels, spec.in_channels, spec.kernel[0],
                                spec.kernel[1], spec.kernel[2]});
  // He initialization: fan-in scaled normal
  std::int64_t fan_in = spec.in_channels * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
  double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (T& v : p.weights.data) v = static_cast<T>(rng.normal(0.0, stddev));
  if (spec.bias) p.bias = TensorT<T>(Shape5::vec(spec.out_channels));
  return p;
}

template <class T>
TensorT<T> make_prelu_slopes(std::int64_t channels, T init = T(0.25)) {
  TensorT<T> s(Shape5::vec(channels));
  std::fill(s.data.begin(), s.data.end(), init);
  return s;
}

}  // namespace fstrn
