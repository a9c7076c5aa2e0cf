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

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace musicnn {

/// Mono audio, samples nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  std::uint32_t sample_rate = 0;

  double duration_seconds() const {
    return sample_rate ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { Pcm16, Float32 };

/// Decodes RIFF/WAVE with PCM16 (format code 1) or float32 (format code 3)
/// little-endian data. Stereo is downmixed by channel mean; PCM16 is scaled
/// by 1/32768.
///
/// Throws UnsupportedFormat, CorruptHeader, EmptyAudio, or IoError.
Waveform load_wav(const std::filesystem::path& path);
Waveform decode_wav(std::span<const std::uint8_t> bytes);

/// Writes a mono (or interleaved multi-channel) WAV file. PCM16 samples are
/// round(x * 32768) clamped to the int16 range.
void write_wav(const std::filesystem::path& path, std::span<const double> interleaved, std::uint32_t sample_rate,
               WavEncoding encoding = WavEncoding::Pcm16, std::uint16_t channels = 1);
std::vector<std::uint8_t> encode_wav(std::span<const double> interleaved, std::uint32_t sample_rate,
                                     WavEncoding encoding = WavEncoding::Pcm16, std::uint16_t channels = 1);

inline void write_wav(const std::filesystem::path& path, const Waveform& w, WavEncoding encoding = WavEncoding::Pcm16) {
  write_wav(path, w.samples, w.sample_rate, encoding, 1);
}

}  // namespace musicnn
