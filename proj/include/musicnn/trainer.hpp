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

// Supervised training with binary cross-entropy and Adam.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "musicnn/architectures.hpp"

namespace musicnn {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  NumericMode mode = NumericMode::Float32;
  double bn_momentum = 0.9;

  /// Throws ConfigInvalid.
  void validate() const;
};

template <typename T>
struct BceResult {
  T loss = 0;
  Tensor<T> grad;  // d loss / d pre-sigmoid score
};

/// Mean over entries of -[t ln p + (1 - t) ln(1 - p)], with the gradient with
/// respect to the pre-sigmoid scores in the fused form (p - t) / n. Throws
/// NumericFault unless every p is strictly inside (0, 1).
template <typename T>
BceResult<T> bce_loss(const Tensor<T>& predictions, const Tensor<T>& targets);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every trainable tensor of `params`
/// using the matching tensors of `grads`.
template <typename T>
void adam_step(std::vector<LayerParams<T>>& params, const std::vector<LayerParams<T>>& grads, AdamState<T>& state,
               const TrainConfig& config);

template <typename T>
struct Example {
  Tensor<T> patch;   // [patch_frames, n_mels] or [1, patch_frames, n_mels]
  Tensor<T> target;  // [n_tags], entries 0 or 1
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean training-mode BCE per epoch

  /// "epoch,loss" header then one row per epoch.
  std::string csv() const;
};

/// Mini-batch training: each epoch shuffles with SplitMix64 seeded from
/// config.seed, splits into batches of batch_size (indices sorted within a
/// batch), runs batch-norm on batch statistics, and blends them into the
/// running statistics with bn_momentum.
template <typename T>
TrainLog fit(Model<T>& model, std::span<const Example<T>> data, const TrainConfig& config);

/// `key = value` lines (# comments) holding TrainConfig fields plus
/// `architecture` and `manifest`.
struct TrainJob {
  TrainConfig train;
  std::string architecture = "toy_musicnn";
  std::filesystem::path manifest;
  std::filesystem::path log;  // optional CSV destination

  static TrainJob load(const std::filesystem::path& path);
};

/// Config for an architecture name: toy_musicnn, toy_musicnn_attention,
/// toy_vgg, musicnn, musicnn_attention, vgg.
ModelConfig architecture_config(std::string_view name, std::size_t n_tags);

/// Builds examples from the manifest (every patch of every train-split clip,
/// one-hot on its label), trains a seeded model and returns it with its log.
template <typename T>
std::pair<Model<T>, TrainLog> run_training(const TrainJob& job);

}  // namespace musicnn
