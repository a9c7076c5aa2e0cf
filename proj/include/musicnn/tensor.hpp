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

#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "musicnn/error.hpp"

namespace musicnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Numeric precision of a model. Float32 is the inference mode, Float64 the
/// verification mode used by gradient checks. A single pass never mixes them.
enum class NumericMode { Float32, Float64 };

/// Dense row-major tensor with explicit shape metadata.
///
/// A default-constructed tensor is empty (no shape, no data). Every other
/// tensor has a non-empty shape of positive extents whose product equals the
/// buffer length.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw Error(ErrorCode::ShapeMismatch, "buffer of " + std::to_string(data_.size()) +
                                                " values does not fit shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& buffer() noexcept { return data_; }
  const std::vector<T>& buffer() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... Index>
  T& at(Index... index) {
    return data_[offset(index...)];
  }
  template <typename... Index>
  const T& at(Index... index) const {
    return data_[offset(index...)];
  }

  /// Same buffer, new shape; the element count must be preserved.
  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename U>
  Tensor<U> cast() const {
    if (empty()) return Tensor<U>();
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw Error(ErrorCode::ShapeMismatch, "tensor shape must have at least one axis");
    for (std::size_t extent : shape) {
      if (extent == 0) throw Error(ErrorCode::ShapeMismatch, "zero extent in shape " + shape_string(shape));
    }
  }

  template <typename... Index>
  std::size_t offset(Index... index) const {
    const std::size_t idx[] = {static_cast<std::size_t>(index)...};
    std::size_t flat = 0;
    for (std::size_t axis = 0; axis < sizeof...(Index); ++axis) flat = flat * shape_[axis] + idx[axis];
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Parameters of one layer. Convolution and dense layers carry `weights` (and
/// optionally `bias`); batch-norm layers carry the four `bn_*` tensors.
template <typename T>
struct LayerParams {
  std::string name;
  std::optional<Tensor<T>> weights;
  std::optional<Tensor<T>> bias;
  std::optional<Tensor<T>> bn_gamma;
  std::optional<Tensor<T>> bn_beta;
  std::optional<Tensor<T>> bn_mean;
  std::optional<Tensor<T>> bn_var;

  bool is_batchnorm() const noexcept { return bn_gamma.has_value(); }

  template <typename U>
  LayerParams<U> cast() const {
    auto conv = [](const std::optional<Tensor<T>>& t) -> std::optional<Tensor<U>> {
      if (!t) return std::nullopt;
      return t->template cast<U>();
    };
    return LayerParams<U>{name, conv(weights), conv(bias), conv(bn_gamma), conv(bn_beta), conv(bn_mean), conv(bn_var)};
  }

  bool operator==(const LayerParams& other) const = default;
};

}  // namespace musicnn
