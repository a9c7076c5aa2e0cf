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

// The musicnn graph (timbral/temporal front-end, residual mid-end, temporal
// pooling or attention back-end) and the vgg-like baseline.
//
// Layers followed by batch normalization carry no bias.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "musicnn/dsp.hpp"
#include "musicnn/ops.hpp"
#include "musicnn/tensor.hpp"

namespace musicnn {

inline constexpr double kBatchNormEpsilon = 1e-3;

enum class Family { Musicnn, Vgg };
enum class Backend { TemporalPooling, Attention };

std::string_view to_string(Family family);
std::string_view to_string(Backend backend);
Family parse_family(std::string_view text);
Backend parse_backend(std::string_view text);

struct PoolShape {
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const PoolShape&) const = default;
};

struct ModelConfig {
  Family family = Family::Musicnn;
  Backend backend = Backend::TemporalPooling;
  std::size_t n_tags = 50;
  DspConfig dsp;

  // musicnn front-end
  std::vector<double> timbral_filter_heights{0.9, 0.4};  // fractions of n_mels
  std::size_t timbral_channels = 51;
  std::vector<std::size_t> temporal_filter_lengths{165, 129, 65, 33};  // frames, odd
  std::size_t temporal_channels = 8;
  // musicnn mid-end / back-end
  std::size_t midend_channels = 64;
  std::size_t midend_kernel = 7;
  std::size_t penultimate_units = 200;

  // vgg
  std::vector<std::size_t> vgg_block_channels{32, 64, 96, 128, 128};
  std::vector<PoolShape> vgg_pool_shapes{{2, 2}, {2, 2}, {2, 2}, {4, 4}, {6, 3}};

  /// Throws ConfigInvalid naming the violated constraint.
  void validate() const;

  std::vector<std::size_t> timbral_widths() const;
  std::size_t frontend_channels() const;
  /// Channels of [front-end, cnn1, cnn2, cnn3] stacked.
  std::size_t stack_channels() const;
  /// vgg input height: patch_frames zero-padded up to a multiple of the
  /// product of the pool heights.
  std::size_t vgg_input_frames() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Full-scale musicnn with the given back-end (MTT_musicnn / MSD_musicnn).
ModelConfig musicnn_config(Backend backend = Backend::TemporalPooling, std::size_t n_tags = 50);
/// Scaled-up mid-end and penultimate layer (MSD_musicnn_big).
ModelConfig musicnn_big_config(std::size_t n_tags = 50);
ModelConfig vgg_config(std::size_t n_tags = 50);

/// Desk-scale configs over 24-frame x 16-band patches, used for gradient
/// checks and fast end-to-end runs.
ModelConfig toy_musicnn_config(Backend backend = Backend::TemporalPooling, std::size_t n_tags = 4);
ModelConfig toy_vgg_config(std::size_t n_tags = 4);

enum class LayerKind { Conv, Dense, BatchNorm };

/// Shape contract of one layer, derived from the config alone.
struct LayerSpec {
  std::string name;
  LayerKind kind;
  Shape weights;  // Conv: [out, in, kh, kw]; Dense: [out, in]; empty for BatchNorm
  bool bias = false;
  std::size_t channels = 0;  // BatchNorm only
};

std::vector<LayerSpec> layer_specs(const ModelConfig& config);
/// Number of trainable scalars (weights, biases, batch-norm scale and shift).
std::size_t trainable_parameter_count(const ModelConfig& config);

struct Init {
  enum class Kind { Zeros, SeededRandom };
  Kind kind = Kind::Zeros;
  std::uint64_t seed = 0;

  static Init zeros() { return {Kind::Zeros, 0}; }
  static Init seeded(std::uint64_t seed) { return {Kind::SeededRandom, seed}; }
};

template <typename T>
struct Model {
  ModelConfig config;
  std::vector<LayerParams<T>> params;
  std::vector<std::string> tags;

  std::size_t index_of(std::string_view layer) const;
  const LayerParams<T>& layer(std::string_view name) const { return params[index_of(name)]; }
  LayerParams<T>& layer(std::string_view name) { return params[index_of(name)]; }

  template <typename U>
  Model<U> cast() const {
    Model<U> out{config, {}, tags};
    out.params.reserve(params.size());
    for (const auto& p : params) out.params.push_back(p.template cast<U>());
    return out;
  }
};

/// Allocates every layer with shapes from layer_specs(). Seeded init draws
/// He-scaled normals (std sqrt(2 / fan_in)) from SplitMix64 seeded with
/// hash(seed, layer name); biases start at zero, batch-norm at the identity,
/// and the attention score layer at zero (uniform attention).
/// Zero init sets every trainable value to 0 and running variances to 1.
/// An empty `tags` list yields "tag0".."tagN-1".
template <typename T>
Model<T> build_model(const ModelConfig& config, Init init, std::vector<std::string> tags = {});

/// Throws ConfigInvalid / ShapeMismatch if the parameters, vocabulary, or
/// config disagree.
template <typename T>
void validate_model(const Model<T>& model);

/// Named intermediate tensors of one forward pass, including "output".
template <typename T>
struct ForwardTrace {
  std::map<std::string, Tensor<T>> features;

  const Tensor<T>& at(std::string_view key) const;
  const Tensor<T>& output() const { return at("output"); }
  std::vector<std::string> keys() const;
};

/// Keys a forward trace of this config carries (sorted).
std::vector<std::string> trace_keys(const ModelConfig& config);

// ---- inference entry points (batch-norm with running statistics) -----------
//
// Patches are [1, T, M] or [T, M] with T == patch_frames, M == n_mels.

template <typename T>
struct FrontendOutput {
  Tensor<T> timbral;   // [timbral channels, T]
  Tensor<T> temporal;  // [temporal channels, T]
  Tensor<T> concat;    // [front-end channels, T]
};

template <typename T>
FrontendOutput<T> musicnn_frontend(const Tensor<T>& patch, const Model<T>& model);

template <typename T>
struct MidendOutput {
  Tensor<T> cnn1, cnn2, cnn3;  // [midend channels, T]
};

template <typename T>
MidendOutput<T> musicnn_midend(const Tensor<T>& concat, const Model<T>& model);

template <typename T>
struct PoolingOutput {
  Tensor<T> mean_pool, max_pool, penultimate, output;
};

/// `stack` is the channel concatenation of [front-end, cnn1, cnn2, cnn3].
template <typename T>
PoolingOutput<T> backend_pooling(const Tensor<T>& stack, const Model<T>& model);

template <typename T>
struct AttentionOutput {
  Tensor<T> attention_weights;  // [T], sums to 1
  Tensor<T> context;            // [stack channels]
  Tensor<T> penultimate, output;
};

template <typename T>
AttentionOutput<T> backend_attention(const Tensor<T>& stack, const Model<T>& model);

template <typename T>
ForwardTrace<T> vgg_forward(const Tensor<T>& patch, const Model<T>& model);

template <typename T>
ForwardTrace<T> forward(const Tensor<T>& patch, const Model<T>& model);

// ---- batched forward / backward ----------------------------------------------

enum class BnMode { Inference, Training };

template <typename T>
struct PassCache;

template <typename T>
struct BatchPass {
  BnMode mode = BnMode::Inference;
  std::vector<ForwardTrace<T>> traces;
  std::vector<Tensor<T>> logits;  // pre-sigmoid scores [n_tags] per example
  /// Training mode: (layer index, batch statistics) of every batch-norm layer.
  std::vector<std::pair<std::size_t, BatchStats<T>>> bn_stats;
  std::shared_ptr<const PassCache<T>> cache;
};

template <typename T>
BatchPass<T> forward_batch(const Model<T>& model, std::span<const Tensor<T>> patches, BnMode mode);

/// Parameter gradients aligned with Model::params; only trainable tensors
/// (weights, bias, bn_gamma, bn_beta) are populated. Example contributions are
/// summed in batch index order.
template <typename T>
using Gradients = std::vector<LayerParams<T>>;

template <typename T>
Gradients<T> backward_batch(const Model<T>& model, const BatchPass<T>& pass, std::span<const Tensor<T>> grad_logits);

/// Calls f(qualified_name, tensor) for each trainable tensor, in layer order.
template <typename Layers, typename F>
void for_each_trainable(Layers& layers, F&& f) {
  for (auto& layer : layers) {
    if (layer.weights) f(layer.name + ".weights", *layer.weights);
    if (layer.bias) f(layer.name + ".bias", *layer.bias);
    if (layer.bn_gamma) f(layer.name + ".gamma", *layer.bn_gamma);
    if (layer.bn_beta) f(layer.name + ".beta", *layer.bn_beta);
  }
}

/// Blends training-mode batch statistics into the running statistics:
/// running = momentum * running + (1 - momentum) * batch.
template <typename T>
void update_running_stats(Model<T>& model, const BatchPass<T>& pass, double momentum);

/// Sets every running mean/variance to the statistics observed on `patches`
/// in training mode, so inference on those patches matches training mode.
template <typename T>
void calibrate_batchnorm(Model<T>& model, std::span<const Tensor<T>> patches);

}  // namespace musicnn
