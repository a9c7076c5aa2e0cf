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

// .mcn weight containers and the registry of named pre-built models.
//
// Container layout:
//   bytes 0..3   "MCN1"
//   bytes 4..11  manifest length in bytes, uint64 little-endian
//   manifest     UTF-8 lines "key value..." (config, one "tag" line per
//                vocabulary entry, one "tensor name dims f32 offset" line per
//                tensor, in layer order), terminated by "end\n"
//   payload      float32 little-endian tensor data, offsets relative to the
//                payload start

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "musicnn/architectures.hpp"

namespace musicnn {

inline constexpr std::string_view kContainerMagic = "MCN1";

template <typename T>
std::vector<std::uint8_t> encode_container(const Model<T>& model, std::string_view name = "custom");

template <typename T>
Model<T> decode_container(std::span<const std::uint8_t> bytes);

/// Name recorded in a container's manifest.
std::string container_name(std::span<const std::uint8_t> bytes);

template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& path, std::string_view name = "custom");

template <typename T>
Model<T> load_model(const std::filesystem::path& path);

struct RegistryEntry {
  std::string name;
  ModelConfig config;
  std::vector<std::string> tags;
};

/// The five model names, in a fixed order.
const std::vector<std::string>& registry_names();

/// Throws UnknownModel listing the valid names.
RegistryEntry registry_get(std::string_view name);

const std::vector<std::string>& mtt_vocabulary();
const std::vector<std::string>& msd_vocabulary();

/// Deterministic weights for a registry name: seeded init from a hash of the
/// name, with batch-norm statistics calibrated on synthetic audio. Built once
/// per process and cached.
template <typename T>
Model<T> registry_model(std::string_view name);

/// A registry name, or a path to a .mcn container.
template <typename T>
Model<T> resolve_model(std::string_view name_or_path);

}  // namespace musicnn
