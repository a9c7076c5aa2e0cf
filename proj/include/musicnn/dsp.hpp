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

// Log-mel front-end: resampling, STFT magnitude, triangular mel filterbank,
// log compression and fixed-length patching. All functions are pure.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "musicnn/tensor.hpp"
#include "musicnn/wav.hpp"

namespace musicnn {

struct DspConfig {
  std::uint32_t sample_rate = 16000;
  std::size_t fft_size = 512;
  std::size_t hop_size = 256;
  std::size_t n_mels = 96;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_offset = 1e-6;
  std::size_t patch_frames = 187;
  std::size_t patch_hop_frames = 187;

  /// Throws ConfigInvalid naming the first violated constraint.
  void validate() const;

  /// Samples needed to produce exactly `frames` STFT frames.
  std::size_t samples_for_frames(std::size_t frames) const { return (frames - 1) * hop_size + fft_size; }
  /// Start time in seconds of patch `index`.
  double patch_start_seconds(std::size_t index) const {
    return static_cast<double>(index * patch_hop_frames * hop_size) / sample_rate;
  }

  bool operator==(const DspConfig&) const = default;
};

/// frames x n_mels natural-log energies.
struct MelSpectrogram {
  Tensor<double> values;
  DspConfig config;

  std::size_t frames() const { return values.extent(0); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Linear interpolation resampler. Output length is
/// floor(len * target / source); positions past the last input sample hold
/// its value. Same-rate input is returned unchanged.
Waveform resample(const Waveform& w, std::uint32_t target_rate);

/// Magnitude of the one-sided DFT of periodic-Hann-windowed, non-centered
/// frames: [floor((len - fft) / hop) + 1, fft / 2 + 1]. Throws AudioTooShort.
Tensor<double> stft_magnitude(const Waveform& w, std::size_t fft_size, std::size_t hop_size);

/// Center frequencies (Hz) of the n_mels filters: interior points of n_mels + 2
/// points equally spaced on the mel scale between fmin and fmax.
std::vector<double> mel_center_frequencies(const DspConfig& cfg);

/// [n_mels, fft / 2 + 1] triangular filters with unit peak at each center,
/// sampled at the FFT bin frequencies k * sample_rate / fft_size. Throws
/// DegenerateBand when a filter is narrower than the bin grid and catches no
/// bin at all.
Tensor<double> mel_filterbank(const DspConfig& cfg);

/// ln(filterbank * |STFT| + log_offset) per frame, after resampling to
/// cfg.sample_rate when needed.
MelSpectrogram log_mel(const Waveform& w, const DspConfig& cfg);

/// Number of patches patchify() will produce for `frames` spectrogram frames.
std::size_t patch_count(std::size_t frames, const DspConfig& cfg);

/// Windows of patch_frames x n_mels at stride patch_hop_frames; a trailing
/// remainder shorter than one patch is dropped. Throws AudioTooShort.
std::vector<Tensor<double>> patchify(const MelSpectrogram& m);

}  // namespace musicnn
