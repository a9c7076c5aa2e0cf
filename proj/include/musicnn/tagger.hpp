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

// Taggrams (per-patch tag activations) and top-N tag listings.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "musicnn/architectures.hpp"
#include "musicnn/wav.hpp"

namespace musicnn {

struct Taggram {
  Tensor<double> values;  // [patches, n_tags], every entry in (0, 1)
  std::vector<std::string> tags;
  std::vector<double> patch_times;  // start of each patch in seconds

  std::size_t patches() const { return values.extent(0); }
};

/// Log-mel patches of a waveform in the model's numeric type.
template <typename T>
std::vector<Tensor<T>> model_patches(const Waveform& audio, const ModelConfig& config);

template <typename T>
Taggram compute_taggram(const Waveform& audio, const Model<T>& model);

template <typename T>
Taggram compute_taggram(const std::filesystem::path& path, const Model<T>& model);

struct TagScore {
  std::string tag;
  double score = 0.0;
};

/// Column means of the taggram, highest first; equal scores keep vocabulary
/// order. Throws TopNOutOfRange unless 1 <= top_n <= n_tags.
std::vector<TagScore> top_tags(const Taggram& taggram, std::size_t top_n);

/// One "tag\tscore\n" line per entry, score with six decimals.
std::string format_listing(std::span<const TagScore> tags);

/// `tagger <file> [--model|-m NAME] [--topN K] [--print] [--save PATH]`.
/// Returns 0 on success, 1 on processing errors, 2 on usage errors.
int tagger_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace musicnn
