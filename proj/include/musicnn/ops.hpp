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

// Forward and hand-written backward passes for the layers used by the musicnn
// and vgg graphs. Every op is pure: inputs are never mutated, outputs are
// checked for NaN/Inf (NumericFault). Instantiated for float and double.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "musicnn/tensor.hpp"

namespace musicnn {

struct Padding {
  std::size_t h = 0;
  std::size_t w = 0;
};

/// Throws NumericFault naming `op` if any value is NaN or infinite.
template <typename T>
void check_finite(const Tensor<T>& t, std::string_view op);

// ---- convolution --------------------------------------------------------

/// Cross-correlation of input [C_in, H, W] with params.weights
/// [C_out, C_in, kH, kW] over the zero-padded input; params.bias [C_out] is
/// added when present. Output [C_out, H + 2 pad_h - kH + 1, W + 2 pad_w - kW + 1].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const LayerParams<T>& params, Padding pad);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::optional<Tensor<T>> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const LayerParams<T>& params, Padding pad,
                               const Tensor<T>& grad_out);

// ---- dense ----------------------------------------------------------------

/// y = W x + b for x [N], W [M, N], b [M] (optional).
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const LayerParams<T>& params);

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::optional<Tensor<T>> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& input, const LayerParams<T>& params, const Tensor<T>& grad_out);

// ---- batch normalization --------------------------------------------------
//
// The channel axis is axis 0 of each example; all remaining axes are spatial.
// Training mode normalizes with statistics pooled over the batch and every
// spatial position (biased variance).

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& input, const LayerParams<T>& params, T epsilon);

template <typename T>
struct BatchNormGrads {
  std::vector<Tensor<T>> inputs;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_infer_backward(const Tensor<T>& input, const LayerParams<T>& params, T epsilon,
                                           const Tensor<T>& grad_out);

template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;
};

template <typename T>
struct BatchNormTrainResult {
  std::vector<Tensor<T>> outputs;
  BatchStats<T> stats;
  // backward cache
  std::vector<Tensor<T>> normalized;
  std::vector<T> inv_std;
};

template <typename T>
BatchNormTrainResult<T> batchnorm_train(std::span<const Tensor<T>> batch, const LayerParams<T>& params, T epsilon);

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const BatchNormTrainResult<T>& forward, const LayerParams<T>& params,
                                           std::span<const Tensor<T>> grad_out);

// ---- activations ----------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& t);
/// Gradient routed where input > 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

/// Logistic sigmoid. Results are clamped into the open interval (0, 1) so
/// saturated inputs never produce exact 0 or 1 in either precision.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& t);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

/// Softmax along `axis`, computed after subtracting the per-slice maximum.
template <typename T>
Tensor<T> softmax_over_axis(const Tensor<T>& t, std::size_t axis);
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& output, const Tensor<T>& grad_out, std::size_t axis);

// ---- pooling ----------------------------------------------------------------

/// Non-overlapping max pooling of [C, H, W] with a window that divides H and W.
template <typename T>
Tensor<T> pool_max(const Tensor<T>& t, std::size_t window_h, std::size_t window_w);
/// Routes each window's gradient to its first (lowest index) maximal cell.
template <typename T>
Tensor<T> pool_max_backward(const Tensor<T>& input, std::size_t window_h, std::size_t window_w,
                            const Tensor<T>& grad_out);

/// Mean over `axis`; the axis is removed (a rank-1 input yields shape [1]).
template <typename T>
Tensor<T> pool_mean_over_axis(const Tensor<T>& t, std::size_t axis);
template <typename T>
Tensor<T> pool_mean_over_axis_backward(const Shape& input_shape, std::size_t axis, const Tensor<T>& grad_out);

/// Max over `axis`; the axis is removed. Ties resolve to the first index.
template <typename T>
Tensor<T> pool_max_over_axis(const Tensor<T>& t, std::size_t axis);
template <typename T>
Tensor<T> pool_max_over_axis_backward(const Tensor<T>& input, std::size_t axis, const Tensor<T>& grad_out);

// ---- structural -------------------------------------------------------------

/// Concatenate along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);

/// Inverse of concat: split `t` along `axis` into pieces of the given extents.
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& t, std::span<const std::size_t> extents, std::size_t axis);

}  // namespace musicnn
