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

// Per-patch intermediate features stacked over a clip, and clip embeddings.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "musicnn/tagger.hpp"

namespace musicnn {

/// Feature name -> tensor with a leading patch axis ([patches, ...]).
using FeatureSet = std::map<std::string, Tensor<double>>;

struct Extraction {
  Taggram taggram;
  std::vector<std::string> tags;
  FeatureSet features;  // empty unless requested
};

/// Keys extract() produces for this config: the trace keys minus "output".
std::vector<std::string> feature_keys(const ModelConfig& config);

/// "penultimate" for musicnn, "pool5" for vgg.
std::string default_feature_key(const ModelConfig& config);

template <typename T>
Extraction extract(const Waveform& audio, const Model<T>& model, bool extract_features);

template <typename T>
Extraction extract(const std::filesystem::path& path, const Model<T>& model, bool extract_features);

enum class Reduction { Mean, Max };

Reduction parse_reduction(std::string_view text);

/// Flattens each patch's feature and reduces across patches. Throws
/// UnknownFeatureKey.
std::vector<double> clip_embedding(const FeatureSet& features, const std::string& key,
                                   Reduction reduction = Reduction::Mean);

/// One CSV row per patch with the flattened feature, six decimals, no header.
void write_feature_csv(const FeatureSet& features, const std::string& key, std::ostream& out);

}  // namespace musicnn
