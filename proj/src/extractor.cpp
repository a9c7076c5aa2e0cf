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

#include "musicnn/extractor.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace musicnn {

std::vector<std::string> feature_keys(const ModelConfig& config) {
  std::vector<std::string> keys = trace_keys(config);
  std::erase(keys, "output");
  return keys;
}

std::string default_feature_key(const ModelConfig& config) {
  return config.family == Family::Vgg ? "pool5" : "penultimate";
}

template <typename T>
Extraction extract(const Waveform& audio, const Model<T>& model, bool extract_features) {
  Extraction e;
  e.tags = model.tags;
  if (!extract_features) {
    e.taggram = compute_taggram(audio, model);
    return e;
  }

  const auto patches = model_patches<T>(audio, model.config);
  const std::size_t n = patches.size();
  Taggram& g = e.taggram;
  g.tags = model.tags;
  g.values = Tensor<double>({n, model.config.n_tags});
  const auto keys = feature_keys(model.config);
  for (std::size_t p = 0; p < n; ++p) {
    const ForwardTrace<T> trace = forward(patches[p], model);
    const Tensor<T>& out = trace.output();
    for (std::size_t k = 0; k < out.size(); ++k) g.values.at(p, k) = static_cast<double>(out[k]);
    g.patch_times.push_back(model.config.dsp.patch_start_seconds(p));
    for (const auto& key : keys) {
      const Tensor<T>& f = trace.at(key);
      auto it = e.features.find(key);
      if (it == e.features.end()) {
        Shape stacked{n};
        stacked.insert(stacked.end(), f.shape().begin(), f.shape().end());
        it = e.features.emplace(key, Tensor<double>(stacked)).first;
      }
      std::copy(f.values().begin(), f.values().end(), it->second.values().begin() + p * f.size());
    }
  }
  return e;
}

template <typename T>
Extraction extract(const std::filesystem::path& path, const Model<T>& model, bool extract_features) {
  return extract(load_wav(path), model, extract_features);
}

Reduction parse_reduction(std::string_view text) {
  if (text == "mean") return Reduction::Mean;
  if (text == "max") return Reduction::Max;
  throw Error(ErrorCode::InvalidArgument, "unknown reduction '" + std::string(text) + "' (mean or max)");
}

namespace {

const Tensor<double>& feature(const FeatureSet& features, const std::string& key) {
  auto it = features.find(key);
  if (it == features.end()) {
    std::string known;
    for (const auto& [k, v] : features) known += (known.empty() ? "" : ", ") + k;
    throw Error(ErrorCode::UnknownFeatureKey, "no feature '" + key + "' (available: " + known + ")");
  }
  return it->second;
}

}  // namespace

std::vector<double> clip_embedding(const FeatureSet& features, const std::string& key, Reduction reduction) {
  const Tensor<double>& f = feature(features, key);
  const std::size_t patches = f.extent(0);
  const std::size_t dim = f.size() / patches;
  std::vector<double> out(f.values().begin(), f.values().begin() + dim);
  for (std::size_t p = 1; p < patches; ++p) {
    const double* row = f.data() + p * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      out[i] = reduction == Reduction::Mean ? out[i] + row[i] : std::max(out[i], row[i]);
    }
  }
  if (reduction == Reduction::Mean) {
    for (double& v : out) v /= static_cast<double>(patches);
  }
  return out;
}

void write_feature_csv(const FeatureSet& features, const std::string& key, std::ostream& out) {
  const Tensor<double>& f = feature(features, key);
  const std::size_t patches = f.extent(0);
  const std::size_t dim = f.size() / patches;
  char buf[64];
  for (std::size_t p = 0; p < patches; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      std::snprintf(buf, sizeof buf, i == 0 ? "%.6f" : ",%.6f", f[p * dim + i]);
      out << buf;
    }
    out << '\n';
  }
}

template Extraction extract<float>(const Waveform&, const Model<float>&, bool);
template Extraction extract<double>(const Waveform&, const Model<double>&, bool);
template Extraction extract<float>(const std::filesystem::path&, const Model<float>&, bool);
template Extraction extract<double>(const std::filesystem::path&, const Model<double>&, bool);

}  // namespace musicnn
