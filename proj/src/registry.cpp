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

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "musicnn/model_store.hpp"
#include "musicnn/rng.hpp"

namespace musicnn {

const std::vector<std::string>& mtt_vocabulary() {
  static const std::vector<std::string> tags{
      "guitar",     "classical",    "slow",        "techno",     "strings",   "drums",    "electronic",
      "rock",       "fast",         "piano",       "ambient",    "beat",      "violin",   "vocal",
      "synth",      "female",       "indian",      "opera",      "male",      "singing",  "vocals",
      "no vocals",  "harpsichord",  "loud",        "quiet",      "flute",     "woman",    "male vocal",
      "no vocal",   "pop",          "soft",        "sitar",      "solo",      "man",      "classic",
      "choir",      "voice",        "new age",     "dance",      "male voice", "female vocal", "beats",
      "harp",       "cello",        "no voice",    "weird",      "country",   "metal",    "female voice",
      "choral"};
  return tags;
}

const std::vector<std::string>& msd_vocabulary() {
  static const std::vector<std::string> tags{
      "rock",        "pop",           "alternative",     "indie",          "electronic",  "female vocalists",
      "dance",       "00s",           "alternative rock", "jazz",          "beautiful",   "metal",
      "chillout",    "male vocalists", "classic rock",   "soul",           "indie rock",  "mellow",
      "electronica", "80s",           "folk",            "90s",            "chill",       "instrumental",
      "punk",        "oldies",        "blues",           "hard rock",      "ambient",     "acoustic",
      "experimental", "female vocalist", "guitar",       "hip-hop",        "70s",         "party",
      "country",     "easy listening", "sexy",           "catchy",         "funk",        "electro",
      "heavy metal", "progressive rock", "60s",          "rnb",            "indie pop",   "sad",
      "house",       "happy"};
  return tags;
}

const std::vector<std::string>& registry_names() {
  static const std::vector<std::string> names{"MTT_musicnn", "MSD_musicnn", "MSD_musicnn_big", "MTT_vgg", "MSD_vgg"};
  return names;
}

RegistryEntry registry_get(std::string_view name) {
  const bool mtt = name.starts_with("MTT_");
  const auto& tags = mtt ? mtt_vocabulary() : msd_vocabulary();
  if (name == "MTT_musicnn" || name == "MSD_musicnn") return {std::string(name), musicnn_config(), tags};
  if (name == "MSD_musicnn_big") return {std::string(name), musicnn_big_config(), tags};
  if (name == "MTT_vgg" || name == "MSD_vgg") return {std::string(name), vgg_config(), tags};
  std::string valid;
  for (const auto& n : registry_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw Error(ErrorCode::UnknownModel, "unknown model '" + std::string(name) + "'; valid names: " + valid);
}

namespace {

constexpr std::size_t kCalibrationPatches = 12;

// One patch per clip, cycling through tones, noise and near-silence at
// levels spread over several decades so the statistics cover typical inputs.
std::vector<Tensor<double>> calibration_patches(const DspConfig& dsp, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Tensor<double>> patches;
  for (std::size_t p = 0; p < kCalibrationPatches; ++p) {
    Waveform w;
    w.sample_rate = dsp.sample_rate;
    w.samples.resize(dsp.samples_for_frames(dsp.patch_frames));
    const double level = std::pow(10.0, rng.uniform(-3.5, -0.3));
    const double freq = rng.uniform(60.0, 0.45 * dsp.sample_rate);
    const double noise = p % 4 == 0 ? 0.0 : level * std::pow(10.0, rng.uniform(-2.0, 0.0));
    const std::size_t kind = p % 4;
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      const double t = static_cast<double>(i) / dsp.sample_rate;
      const double tone = level * std::sin(2.0 * std::numbers::pi * freq * t);
      double x = noise * rng.normal();
      if (kind == 0 || kind == 2) x += tone;
      if (kind == 3) x *= 0.5 * (1.0 + std::sin(2.0 * std::numbers::pi * 2.0 * t));
      w.samples[i] = x;
    }
    patches.push_back(patchify(log_mel(w, dsp)).front());
  }
  return patches;
}

const Model<double>& cached_registry_model(std::string_view name) {
  static std::mutex mutex;
  static std::map<std::string, Model<double>, std::less<>> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(name); it != cache.end()) return it->second;
  const RegistryEntry entry = registry_get(name);
  const std::uint64_t seed = fnv1a(name);
  Model<double> model = build_model<double>(entry.config, Init::seeded(seed), entry.tags);
  calibrate_batchnorm<double>(model, calibration_patches(entry.config.dsp, seed));
  return cache.emplace(entry.name, std::move(model)).first->second;
}

}  // namespace

template <typename T>
Model<T> registry_model(std::string_view name) {
  return cached_registry_model(name).template cast<T>();
}

template Model<float> registry_model<float>(std::string_view);
template Model<double> registry_model<double>(std::string_view);

}  // namespace musicnn
