// Copyright 2026 The musicnn-cpp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "musicnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace musicnn {
namespace {

[[noreturn]] void shape_error(std::string_view op, const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + what);
}

void expect_rank(std::string_view op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    shape_error(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(shape));
  }
}

template <typename T>
const Tensor<T>& require(const std::optional<Tensor<T>>& t, std::string_view op, std::string_view field) {
  if (!t) shape_error(op, "layer is missing its " + std::string(field) + " tensor");
  return *t;
}

// outer x axis x inner decomposition of a row-major shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t axis = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis, std::string_view op) {
  if (axis >= shape.size()) {
    shape_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

struct BnView {
  std::size_t channels;
  std::size_t spatial;
};

template <typename T>
BnView bn_view(const Tensor<T>& x, const LayerParams<T>& p, std::string_view op) {
  const auto& gamma = require(p.bn_gamma, op, "gamma");
  if (x.empty()) shape_error(op, "empty input");
  const std::size_t channels = x.extent(0);
  if (gamma.size() != channels || require(p.bn_beta, op, "beta").size() != channels) {
    shape_error(op, "layer '" + p.name + "' has " + std::to_string(gamma.size()) + " channels, input has " +
                        std::to_string(channels));
  }
  return {channels, x.size() / channels};
}

}  // namespace

template <typename T>
void check_finite(const Tensor<T>& t, std::string_view op) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw Error(ErrorCode::NumericFault, std::string(op) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

// ---- convolution ------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const LayerParams<T>& params, Padding pad) {
  constexpr std::string_view op = "conv2d";
  const auto& w = require(params.weights, op, "weights");
  expect_rank(op, input.shape(), 3);
  expect_rank(op, w.shape(), 4);
  const std::size_t cin = input.extent(0), h = input.extent(1), wd = input.extent(2);
  const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  if (w.extent(1) != cin) {
    shape_error(op, "weights " + shape_string(w.shape()) + " do not match input channels " + std::to_string(cin));
  }
  if (kh > h + 2 * pad.h || kw > wd + 2 * pad.w) {
    shape_error(op, "kernel " + shape_string(w.shape()) + " larger than padded input " + shape_string(input.shape()));
  }
  if (params.bias && params.bias->size() != cout) shape_error(op, "bias length does not match output channels");

  const std::size_t ho = h + 2 * pad.h - kh + 1;
  const std::size_t wo = wd + 2 * pad.w - kw + 1;
  Tensor<T> out({cout, ho, wo});
  const T* in = input.data();
  const T* wt = w.data();
  T* o = out.data();

  for (std::size_t oc = 0; oc < cout; ++oc) {
    T* out_plane = o + oc * ho * wo;
    if (params.bias) std::fill(out_plane, out_plane + ho * wo, (*params.bias)[oc]);
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const T* in_plane = in + ic * h * wd;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const T k = wt[((oc * cin + ic) * kh + i) * kw + j];
          // output column x reads input column x + j - pad.w
          const std::size_t x_lo = j < pad.w ? pad.w - j : 0;
          if (wd + pad.w <= j) continue;
          const std::size_t x_hi = std::min(wo, wd + pad.w - j);
          if (x_lo >= x_hi) continue;
          for (std::size_t y = 0; y < ho; ++y) {
            const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(y + i) - static_cast<std::ptrdiff_t>(pad.h);
            if (row < 0 || row >= static_cast<std::ptrdiff_t>(h)) continue;
            const T* src = in_plane + static_cast<std::size_t>(row) * wd + (x_lo + j - pad.w);
            T* dst = out_plane + y * wo + x_lo;
            for (std::size_t x = 0; x < x_hi - x_lo; ++x) dst[x] += k * src[x];
          }
        }
      }
    }
  }
  check_finite(out, op);
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const LayerParams<T>& params, Padding pad,
                               const Tensor<T>& grad_out) {
  constexpr std::string_view op = "conv2d_backward";
  const auto& w = require(params.weights, op, "weights");
  expect_rank(op, input.shape(), 3);
  expect_rank(op, w.shape(), 4);
  const std::size_t cin = input.extent(0), h = input.extent(1), wd = input.extent(2);
  const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  if (w.extent(1) != cin || kh > h + 2 * pad.h || kw > wd + 2 * pad.w) {
    shape_error(op, "weights " + shape_string(w.shape()) + " inconsistent with input " + shape_string(input.shape()));
  }
  const std::size_t ho = h + 2 * pad.h - kh + 1;
  const std::size_t wo = wd + 2 * pad.w - kw + 1;
  if (grad_out.shape() != Shape{cout, ho, wo}) {
    shape_error(op, "grad_out " + shape_string(grad_out.shape()) + " does not match forward output");
  }

  Conv2dGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(w.shape()), std::nullopt};
  if (params.bias) {
    g.bias = Tensor<T>({cout});
    for (std::size_t oc = 0; oc < cout; ++oc) {
      T sum = 0;
      for (std::size_t k = 0; k < ho * wo; ++k) sum += grad_out[oc * ho * wo + k];
      (*g.bias)[oc] = sum;
    }
  }

  const T* in = input.data();
  const T* wt = w.data();
  const T* go = grad_out.data();
  T* gin = g.input.data();
  T* gw = g.weights.data();

  for (std::size_t oc = 0; oc < cout; ++oc) {
    const T* go_plane = go + oc * ho * wo;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const T* in_plane = in + ic * h * wd;
      T* gin_plane = gin + ic * h * wd;
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const std::size_t widx = ((oc * cin + ic) * kh + i) * kw + j;
          const T k = wt[widx];
          const std::size_t x_lo = j < pad.w ? pad.w - j : 0;
          if (wd + pad.w <= j) continue;
          const std::size_t x_hi = std::min(wo, wd + pad.w - j);
          if (x_lo >= x_hi) continue;
          T acc = 0;
          for (std::size_t y = 0; y < ho; ++y) {
            const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(y + i) - static_cast<std::ptrdiff_t>(pad.h);
            if (row < 0 || row >= static_cast<std::ptrdiff_t>(h)) continue;
            const std::size_t src_off = static_cast<std::size_t>(row) * wd + (x_lo + j - pad.w);
            const T* src = in_plane + src_off;
            T* gsrc = gin_plane + src_off;
            const T* gy = go_plane + y * wo + x_lo;
            for (std::size_t x = 0; x < x_hi - x_lo; ++x) {
              acc += gy[x] * src[x];
              gsrc[x] += gy[x] * k;
            }
          }
          gw[widx] = acc;
        }
      }
    }
  }
  return g;
}

// ---- dense --------------------------------------------------------------------

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const LayerParams<T>& params) {
  constexpr std::string_view op = "dense";
  const auto& w = require(params.weights, op, "weights");
  expect_rank(op, w.shape(), 2);
  const std::size_t m = w.extent(0), n = w.extent(1);
  if (input.size() != n) {
    shape_error(op, "input of " + std::to_string(input.size()) + " values for weights " + shape_string(w.shape()));
  }
  if (params.bias && params.bias->size() != m) shape_error(op, "bias length does not match output units");
  Tensor<T> out({m});
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = w.data() + r * n;
    T acc = params.bias ? (*params.bias)[r] : T(0);
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * input[c];
    out[r] = acc;
  }
  check_finite(out, op);
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const LayerParams<T>& params, const Tensor<T>& grad_out) {
  constexpr std::string_view op = "dense_backward";
  const auto& w = require(params.weights, op, "weights");
  expect_rank(op, w.shape(), 2);
  const std::size_t m = w.extent(0), n = w.extent(1);
  if (input.size() != n || grad_out.size() != m) shape_error(op, "shapes inconsistent with forward call");
  DenseGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(w.shape()), std::nullopt};
  for (std::size_t r = 0; r < m; ++r) {
    const T gy = grad_out[r];
    const T* row = w.data() + r * n;
    T* grow = g.weights.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      grow[c] = gy * input[c];
      g.input[c] += gy * row[c];
    }
  }
  if (params.bias) g.bias = Tensor<T>({m}, std::vector<T>(grad_out.values().begin(), grad_out.values().end()));
  return g;
}

// ---- batch normalization ----------------------------------------------------------

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const LayerParams<T>& params, T epsilon) {
  constexpr std::string_view op = "batchnorm_infer";
  const auto [channels, spatial] = bn_view(input, params, op);
  const auto& gamma = *params.bn_gamma;
  const auto& beta = *params.bn_beta;
  const auto& mean = require(params.bn_mean, op, "running mean");
  const auto& var = require(params.bn_var, op, "running variance");
  if (mean.size() != channels || var.size() != channels) shape_error(op, "running statistics length mismatch");
  Tensor<T> out(input.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const T scale = gamma[c] / std::sqrt(var[c] + epsilon);
    for (std::size_t s = 0; s < spatial; ++s) {
      const std::size_t i = c * spatial + s;
      out[i] = (input[i] - mean[c]) * scale + beta[c];
    }
  }
  check_finite(out, op);
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_infer_backward(const Tensor<T>& input, const LayerParams<T>& params, T epsilon,
                                           const Tensor<T>& grad_out) {
  constexpr std::string_view op = "batchnorm_infer_backward";
  const auto [channels, spatial] = bn_view(input, params, op);
  if (grad_out.shape() != input.shape()) shape_error(op, "grad_out shape differs from input");
  const auto& gamma = *params.bn_gamma;
  const auto& mean = require(params.bn_mean, op, "running mean");
  const auto& var = require(params.bn_var, op, "running variance");
  BatchNormGrads<T> g{{Tensor<T>(input.shape())}, Tensor<T>({channels}), Tensor<T>({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    const T inv_std = T(1) / std::sqrt(var[c] + epsilon);
    T g_gamma = 0, g_beta = 0;
    for (std::size_t s = 0; s < spatial; ++s) {
      const std::size_t i = c * spatial + s;
      g.inputs[0][i] = grad_out[i] * gamma[c] * inv_std;
      g_gamma += grad_out[i] * (input[i] - mean[c]) * inv_std;
      g_beta += grad_out[i];
    }
    g.gamma[c] = g_gamma;
    g.beta[c] = g_beta;
  }
  return g;
}

template <typename T>
BatchNormTrainResult<T> batchnorm_train(std::span<const Tensor<T>> batch, const LayerParams<T>& params, T epsilon) {
  constexpr std::string_view op = "batchnorm_train";
  if (batch.empty()) shape_error(op, "empty batch");
  const auto [channels, spatial] = bn_view(batch[0], params, op);
  for (const auto& x : batch) {
    if (x.shape() != batch[0].shape()) shape_error(op, "examples in a batch must share one shape");
  }
  const auto& gamma = *params.bn_gamma;
  const auto& beta = *params.bn_beta;
  const T count = static_cast<T>(batch.size() * spatial);

  BatchNormTrainResult<T> r;
  r.stats.mean.assign(channels, T(0));
  r.stats.var.assign(channels, T(0));
  r.inv_std.assign(channels, T(0));
  for (std::size_t c = 0; c < channels; ++c) {
    T sum = 0;
    for (const auto& x : batch)
      for (std::size_t s = 0; s < spatial; ++s) sum += x[c * spatial + s];
    const T mean = sum / count;
    T sq = 0;
    for (const auto& x : batch)
      for (std::size_t s = 0; s < spatial; ++s) {
        const T d = x[c * spatial + s] - mean;
        sq += d * d;
      }
    r.stats.mean[c] = mean;
    r.stats.var[c] = sq / count;
    r.inv_std[c] = T(1) / std::sqrt(r.stats.var[c] + epsilon);
  }
  r.outputs.reserve(batch.size());
  r.normalized.reserve(batch.size());
  for (const auto& x : batch) {
    Tensor<T> xhat(x.shape()), y(x.shape());
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = c * spatial + s;
        xhat[i] = (x[i] - r.stats.mean[c]) * r.inv_std[c];
        y[i] = gamma[c] * xhat[i] + beta[c];
      }
    }
    check_finite(y, op);
    r.normalized.push_back(std::move(xhat));
    r.outputs.push_back(std::move(y));
  }
  return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BatchNormTrainResult<T>& forward, const LayerParams<T>& params,
                                           std::span<const Tensor<T>> grad_out) {
  constexpr std::string_view op = "batchnorm_train_backward";
  if (grad_out.size() != forward.normalized.size()) shape_error(op, "batch size differs from forward pass");
  const auto [channels, spatial] = bn_view(forward.normalized.at(0), params, op);
  const auto& gamma = *params.bn_gamma;
  const T count = static_cast<T>(grad_out.size() * spatial);

  BatchNormGrads<T> g{{}, Tensor<T>({channels}), Tensor<T>({channels})};
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    if (grad_out[b].shape() != forward.normalized[b].shape()) shape_error(op, "grad_out shape differs from input");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    T g_gamma = 0, g_beta = 0;
    for (std::size_t b = 0; b < grad_out.size(); ++b) {
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = c * spatial + s;
        g_beta += grad_out[b][i];
        g_gamma += grad_out[b][i] * forward.normalized[b][i];
      }
    }
    g.gamma[c] = g_gamma;
    g.beta[c] = g_beta;
  }
  g.inputs.reserve(grad_out.size());
  for (std::size_t b = 0; b < grad_out.size(); ++b) {
    Tensor<T> gx(grad_out[b].shape());
    for (std::size_t c = 0; c < channels; ++c) {
      const T k = gamma[c] * forward.inv_std[c] / count;
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = c * spatial + s;
        gx[i] = k * (count * grad_out[b][i] - g.beta[c] - forward.normalized[b][i] * g.gamma[c]);
      }
    }
    g.inputs.push_back(std::move(gx));
  }
  return g;
}

// ---- activations ------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& t) {
  Tensor<T> out = t;
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  check_finite(out, "relu");
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) shape_error("relu_backward", "grad_out shape differs from input");
  Tensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& t) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  Tensor<T> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const T x = t[i];
    T s;
    if (x >= T(0)) {
      s = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      s = e / (T(1) + e);
    }
    out[i] = std::clamp(s, lo, hi);
  }
  check_finite(out, "sigmoid");
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  if (output.shape() != grad_out.shape()) shape_error("sigmoid_backward", "grad_out shape differs from output");
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) g[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  return g;
}

template <typename T>
Tensor<T> softmax_over_axis(const Tensor<T>& t, std::size_t axis) {
  const AxisSplit s = split_at(t.shape(), axis, "softmax_over_axis");
  Tensor<T> out(t.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      T peak = t[base];
      for (std::size_t a = 1; a < s.axis; ++a) peak = std::max(peak, t[base + a * s.inner]);
      T total = 0;
      for (std::size_t a = 0; a < s.axis; ++a) {
        const T e = std::exp(t[base + a * s.inner] - peak);
        out[base + a * s.inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < s.axis; ++a) out[base + a * s.inner] /= total;
    }
  }
  check_finite(out, "softmax_over_axis");
  return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& output, const Tensor<T>& grad_out, std::size_t axis) {
  if (output.shape() != grad_out.shape()) shape_error("softmax_backward", "grad_out shape differs from output");
  const AxisSplit s = split_at(output.shape(), axis, "softmax_backward");
  Tensor<T> g(output.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.axis * s.inner + in;
      T dot = 0;
      for (std::size_t a = 0; a < s.axis; ++a) dot += grad_out[base + a * s.inner] * output[base + a * s.inner];
      for (std::size_t a = 0; a < s.axis; ++a) {
        const std::size_t i = base + a * s.inner;
        g[i] = output[i] * (grad_out[i] - dot);
      }
    }
  }
  return g;
}

// ---- pooling --------------------------------------------------------------------------

template <typename T>
Tensor<T> pool_max(const Tensor<T>& t, std::size_t window_h, std::size_t window_w) {
  constexpr std::string_view op = "pool_max";
  expect_rank(op, t.shape(), 3);
  const std::size_t c = t.extent(0), h = t.extent(1), w = t.extent(2);
  if (window_h == 0 || window_w == 0 || h % window_h != 0 || w % window_w != 0) {
    shape_error(op, "window " + std::to_string(window_h) + "x" + std::to_string(window_w) + " does not divide " +
                        shape_string(t.shape()));
  }
  const std::size_t ho = h / window_h, wo = w / window_w;
  Tensor<T> out({c, ho, wo});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        T best = t.at(ch, y * window_h, x * window_w);
        for (std::size_t i = 0; i < window_h; ++i)
          for (std::size_t j = 0; j < window_w; ++j) best = std::max(best, t.at(ch, y * window_h + i, x * window_w + j));
        out.at(ch, y, x) = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> pool_max_backward(const Tensor<T>& input, std::size_t window_h, std::size_t window_w,
                            const Tensor<T>& grad_out) {
  constexpr std::string_view op = "pool_max_backward";
  expect_rank(op, input.shape(), 3);
  const std::size_t c = input.extent(0), h = input.extent(1), w = input.extent(2);
  if (window_h == 0 || window_w == 0 || h % window_h != 0 || w % window_w != 0) shape_error(op, "window does not divide input");
  const std::size_t ho = h / window_h, wo = w / window_w;
  if (grad_out.shape() != Shape{c, ho, wo}) shape_error(op, "grad_out does not match pooled shape");
  Tensor<T> g(input.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < ho; ++y) {
      for (std::size_t x = 0; x < wo; ++x) {
        // scan in row-major order: strict '>' keeps the first maximal cell
        std::size_t by = y * window_h, bx = x * window_w;
        T best = input.at(ch, by, bx);
        for (std::size_t i = 0; i < window_h; ++i) {
          for (std::size_t j = 0; j < window_w; ++j) {
            const T v = input.at(ch, y * window_h + i, x * window_w + j);
            if (v > best) {
              best = v;
              by = y * window_h + i;
              bx = x * window_w + j;
            }
          }
        }
        g.at(ch, by, bx) += grad_out.at(ch, y, x);
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> pool_mean_over_axis(const Tensor<T>& t, std::size_t axis) {
  const AxisSplit s = split_at(t.shape(), axis, "pool_mean_over_axis");
  Tensor<T> out(drop_axis(t.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      T sum = 0;
      for (std::size_t a = 0; a < s.axis; ++a) sum += t[(o * s.axis + a) * s.inner + in];
      out[o * s.inner + in] = sum / static_cast<T>(s.axis);
    }
  }
  return out;
}

template <typename T>
Tensor<T> pool_mean_over_axis_backward(const Shape& input_shape, std::size_t axis, const Tensor<T>& grad_out) {
  const AxisSplit s = split_at(input_shape, axis, "pool_mean_over_axis_backward");
  if (grad_out.size() != s.outer * s.inner) shape_error("pool_mean_over_axis_backward", "grad_out size mismatch");
  Tensor<T> g(input_shape);
  const T scale = T(1) / static_cast<T>(s.axis);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.axis; ++a)
      for (std::size_t in = 0; in < s.inner; ++in) g[(o * s.axis + a) * s.inner + in] = grad_out[o * s.inner + in] * scale;
  return g;
}

template <typename T>
Tensor<T> pool_max_over_axis(const Tensor<T>& t, std::size_t axis) {
  const AxisSplit s = split_at(t.shape(), axis, "pool_max_over_axis");
  Tensor<T> out(drop_axis(t.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      T best = t[o * s.axis * s.inner + in];
      for (std::size_t a = 1; a < s.axis; ++a) best = std::max(best, t[(o * s.axis + a) * s.inner + in]);
      out[o * s.inner + in] = best;
    }
  }
  return out;
}

template <typename T>
Tensor<T> pool_max_over_axis_backward(const Tensor<T>& input, std::size_t axis, const Tensor<T>& grad_out) {
  const AxisSplit s = split_at(input.shape(), axis, "pool_max_over_axis_backward");
  if (grad_out.size() != s.outer * s.inner) shape_error("pool_max_over_axis_backward", "grad_out size mismatch");
  Tensor<T> g(input.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t arg = 0;
      T best = input[o * s.axis * s.inner + in];
      for (std::size_t a = 1; a < s.axis; ++a) {
        const T v = input[(o * s.axis + a) * s.inner + in];
        if (v > best) {
          best = v;
          arg = a;
        }
      }
      g[(o * s.axis + arg) * s.inner + in] = grad_out[o * s.inner + in];
    }
  }
  return g;
}

// ---- structural -------------------------------------------------------------------------

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  constexpr std::string_view op = "concat";
  if (parts.empty()) shape_error(op, "nothing to concatenate");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) shape_error(op, "axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) shape_error(op, "rank mismatch");
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i != axis && p.extent(i) != shape[i]) {
        shape_error(op, shape_string(p.shape()) + " incompatible with " + shape_string(shape));
      }
    }
    total += p.extent(axis);
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis, op);
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.extent(axis) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data() + o * len, len, out.data() + o * s.axis * s.inner + offset);
    }
    offset += len;
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& t, std::span<const std::size_t> extents, std::size_t axis) {
  const AxisSplit s = split_at(t.shape(), axis, "split");
  std::size_t total = 0;
  for (std::size_t e : extents) total += e;
  if (total != s.axis) shape_error("split", "extents do not sum to the axis length");
  std::vector<Tensor<T>> out;
  std::size_t offset = 0;
  for (std::size_t e : extents) {
    Shape shape = t.shape();
    shape[axis] = e;
    Tensor<T> piece(shape);
    const std::size_t len = e * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(t.data() + o * s.axis * s.inner + offset, len, piece.data() + o * len);
    }
    offset += len;
    out.push_back(std::move(piece));
  }
  return out;
}

#define MUSICNN_INSTANTIATE_OPS(T)                                                                              \
  template void check_finite<T>(const Tensor<T>&, std::string_view);                                            \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const LayerParams<T>&, Padding);                               \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const LayerParams<T>&, Padding, const Tensor<T>&); \
  template Tensor<T> dense<T>(const Tensor<T>&, const LayerParams<T>&);                                         \
  template DenseGrads<T> dense_backward<T>(const Tensor<T>&, const LayerParams<T>&, const Tensor<T>&);          \
  template Tensor<T> batchnorm_infer<T>(const Tensor<T>&, const LayerParams<T>&, T);                            \
  template BatchNormGrads<T> batchnorm_infer_backward<T>(const Tensor<T>&, const LayerParams<T>&, T,            \
                                                         const Tensor<T>&);                                     \
  template BatchNormTrainResult<T> batchnorm_train<T>(std::span<const Tensor<T>>, const LayerParams<T>&, T);    \
  template BatchNormGrads<T> batchnorm_train_backward<T>(const BatchNormTrainResult<T>&, const LayerParams<T>&, \
                                                         std::span<const Tensor<T>>);                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                              \
  template Tensor<T> sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> softmax_over_axis<T>(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&, std::size_t);                      \
  template Tensor<T> pool_max<T>(const Tensor<T>&, std::size_t, std::size_t);                                   \
  template Tensor<T> pool_max_backward<T>(const Tensor<T>&, std::size_t, std::size_t, const Tensor<T>&);        \
  template Tensor<T> pool_mean_over_axis<T>(const Tensor<T>&, std::size_t);                                     \
  template Tensor<T> pool_mean_over_axis_backward<T>(const Shape&, std::size_t, const Tensor<T>&);              \
  template Tensor<T> pool_max_over_axis<T>(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> pool_max_over_axis_backward<T>(const Tensor<T>&, std::size_t, const Tensor<T>&);           \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, std::size_t);                                        \
  template std::vector<Tensor<T>> split<T>(const Tensor<T>&, std::span<const std::size_t>, std::size_t);

MUSICNN_INSTANTIATE_OPS(float)
MUSICNN_INSTANTIATE_OPS(double)

#undef MUSICNN_INSTANTIATE_OPS

}  // namespace musicnn
