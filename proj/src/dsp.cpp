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

#include "musicnn/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <string>

#include "musicnn/ops.hpp"

namespace musicnn {
namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigInvalid, "DspConfig: " + what); }

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

RealBuffer alloc_real(std::size_t n) { return RealBuffer(fftw_alloc_real(n)); }
ComplexBuffer alloc_complex(std::size_t n) { return ComplexBuffer(fftw_alloc_complex(n)); }

// The FFTW planner is not thread-safe; execution with new-array execute is.
fftw_plan r2c_plan(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, fftw_plan> plans;
  std::lock_guard lock(mutex);
  if (auto it = plans.find(n); it != plans.end()) return it->second;
  RealBuffer in = alloc_real(n);
  ComplexBuffer out = alloc_complex(n / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
  plans.emplace(n, plan);
  return plan;
}

}  // namespace

void DspConfig::validate() const {
  if (sample_rate == 0) config_error("sample_rate must be positive");
  if (fft_size < 2) config_error("fft_size must be at least 2");
  if (hop_size == 0 || hop_size > fft_size) config_error("hop_size must be in [1, fft_size]");
  if (n_mels < 1) config_error("n_mels must be at least 1");
  if (!(fmin >= 0.0) || !(fmin < fmax)) config_error("fmin must be non-negative and below fmax");
  if (fmax > sample_rate / 2.0) config_error("fmax exceeds the Nyquist frequency");
  if (!(log_offset > 0.0)) config_error("log_offset must be positive");
  if (patch_frames < 1) config_error("patch_frames must be at least 1");
  if (patch_hop_frames < 1) config_error("patch_hop_frames must be at least 1");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

Waveform resample(const Waveform& w, std::uint32_t target_rate) {
  if (target_rate == 0) throw Error(ErrorCode::InvalidArgument, "resample: target rate must be positive");
  if (w.sample_rate == 0) throw Error(ErrorCode::InvalidArgument, "resample: source rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const std::uint64_t src = w.sample_rate, dst = target_rate;
  const std::size_t len = w.samples.size();
  const std::size_t out_len = static_cast<std::size_t>(static_cast<std::uint64_t>(len) * dst / src);
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    // exact rational position i * src / dst
    const std::uint64_t num = static_cast<std::uint64_t>(i) * src;
    const std::size_t idx = static_cast<std::size_t>(num / dst);
    const double frac = static_cast<double>(num % dst) / static_cast<double>(dst);
    if (idx + 1 < len) {
      out.samples[i] = w.samples[idx] + frac * (w.samples[idx + 1] - w.samples[idx]);
    } else {
      out.samples[i] = w.samples[len - 1];
    }
  }
  return out;
}

Tensor<double> stft_magnitude(const Waveform& w, std::size_t fft_size, std::size_t hop_size) {
  if (fft_size < 2 || hop_size == 0) throw Error(ErrorCode::InvalidArgument, "stft: fft_size >= 2 and hop >= 1 required");
  const std::size_t len = w.samples.size();
  if (len < fft_size) {
    throw Error(ErrorCode::AudioTooShort, std::to_string(len) + " samples is shorter than one FFT frame (" +
                                              std::to_string(fft_size) + ")");
  }
  const std::size_t frames = (len - fft_size) / hop_size + 1;
  const std::size_t bins = fft_size / 2 + 1;

  std::vector<double> window(fft_size);
  for (std::size_t n = 0; n < fft_size; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(fft_size));
  }

  const fftw_plan plan = r2c_plan(fft_size);
  RealBuffer in = alloc_real(fft_size);
  ComplexBuffer spectrum = alloc_complex(bins);
  Tensor<double> out({frames, bins});
  for (std::size_t f = 0; f < frames; ++f) {
    const double* frame = w.samples.data() + f * hop_size;
    for (std::size_t n = 0; n < fft_size; ++n) in[n] = frame[n] * window[n];
    fftw_execute_dft_r2c(plan, in.get(), spectrum.get());
    for (std::size_t k = 0; k < bins; ++k) out.at(f, k) = std::hypot(spectrum[k][0], spectrum[k][1]);
  }
  check_finite(out, "stft_magnitude");
  return out;
}

std::vector<double> mel_center_frequencies(const DspConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  const double step = (hi - lo) / static_cast<double>(cfg.n_mels + 1);
  std::vector<double> centers(cfg.n_mels);
  for (std::size_t i = 0; i < cfg.n_mels; ++i) centers[i] = mel_to_hz(lo + step * static_cast<double>(i + 1));
  return centers;
}

Tensor<double> mel_filterbank(const DspConfig& cfg) {
  cfg.validate();
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  const double step = (hi - lo) / static_cast<double>(cfg.n_mels + 1);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(lo + step * static_cast<double>(i));

  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(cfg.sample_rate) / static_cast<double>(cfg.fft_size);
  Tensor<double> fb({cfg.n_mels, bins});
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double row_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double v = 0.0;
      if (f > left && f <= center) {
        v = (f - left) / (center - left);
      } else if (f > center && f < right) {
        v = (right - f) / (right - center);
      }
      fb.at(m, k) = v;
      row_sum += v;
    }
    if (row_sum <= 0.0) {
      throw Error(ErrorCode::DegenerateBand,
                  "mel filter " + std::to_string(m) + " centered at " + std::to_string(center) +
                      " Hz covers no FFT bin; reduce n_mels or increase fft_size");
    }
  }
  return fb;
}

MelSpectrogram log_mel(const Waveform& w, const DspConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw Error(ErrorCode::EmptyAudio, "log_mel: waveform has no samples");
  const Waveform resampled = w.sample_rate == cfg.sample_rate ? w : resample(w, cfg.sample_rate);
  const Tensor<double> mag = stft_magnitude(resampled, cfg.fft_size, cfg.hop_size);
  const Tensor<double> fb = mel_filterbank(cfg);

  const std::size_t frames = mag.extent(0), bins = mag.extent(1);
  Tensor<double> values({frames, cfg.n_mels});
  for (std::size_t t = 0; t < frames; ++t) {
    const double* spectrum = mag.data() + t * bins;
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      const double* filter = fb.data() + m * bins;
      double energy = 0.0;
      for (std::size_t k = 0; k < bins; ++k) energy += filter[k] * spectrum[k];
      values.at(t, m) = std::log(energy + cfg.log_offset);
    }
  }
  check_finite(values, "log_mel");
  return MelSpectrogram{std::move(values), cfg};
}

std::size_t patch_count(std::size_t frames, const DspConfig& cfg) {
  if (frames < cfg.patch_frames) return 0;
  return (frames - cfg.patch_frames) / cfg.patch_hop_frames + 1;
}

std::vector<Tensor<double>> patchify(const MelSpectrogram& m) {
  const DspConfig& cfg = m.config;
  cfg.validate();
  const std::size_t frames = m.values.empty() ? 0 : m.frames();
  const std::size_t count = patch_count(frames, cfg);
  if (count == 0) {
    throw Error(ErrorCode::AudioTooShort, std::to_string(frames) + " frames is shorter than one patch (" +
                                              std::to_string(cfg.patch_frames) + ")");
  }
  const std::size_t width = m.values.extent(1);
  std::vector<Tensor<double>> patches;
  patches.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    const double* start = m.values.data() + p * cfg.patch_hop_frames * width;
    patches.emplace_back(Shape{cfg.patch_frames, width}, std::vector<double>(start, start + cfg.patch_frames * width));
  }
  return patches;
}

}  // namespace musicnn
