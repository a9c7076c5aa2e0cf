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

// Brute-force oracles and synthetic fixtures shared by the test binaries.
// Oracles are written from the definitions with plain loops and share no
// code with the library kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "musicnn/architectures.hpp"
#include "musicnn/grad_check.hpp"
#include "musicnn/rng.hpp"
#include "musicnn/trainer.hpp"
#include "musicnn/wav.hpp"

namespace testing {

using musicnn::Shape;
using musicnn::SplitMix64;
using musicnn::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-30});
  return std::abs(a - b) / scale;
}

/// Largest |a - b| / max(|b|, floor) over all entries.
template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-3) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    worst = std::max(worst, std::abs(x - y) / std::max(std::abs(y), floor));
  }
  return worst;
}

// ---- oracles ----

/// out[o, y, x] = b[o] + sum_{c,i,j} w[o, c, i, j] * in[c, y + i - ph, x + j - pw]
template <typename T>
Tensor<T> conv2d_oracle(const Tensor<T>& in, const Tensor<T>& w, const std::optional<Tensor<T>>& bias, std::size_t ph,
                        std::size_t pw) {
  const long C = static_cast<long>(in.extent(0)), H = static_cast<long>(in.extent(1)),
             W = static_cast<long>(in.extent(2));
  const long O = static_cast<long>(w.extent(0)), KH = static_cast<long>(w.extent(2)),
             KW = static_cast<long>(w.extent(3));
  const long OH = H + 2 * static_cast<long>(ph) - KH + 1, OW = W + 2 * static_cast<long>(pw) - KW + 1;
  Tensor<T> out({static_cast<std::size_t>(O), static_cast<std::size_t>(OH), static_cast<std::size_t>(OW)});
  for (long o = 0; o < O; ++o)
    for (long y = 0; y < OH; ++y)
      for (long x = 0; x < OW; ++x) {
        long double acc = bias ? (*bias)[o] : 0;
        for (long c = 0; c < C; ++c)
          for (long i = 0; i < KH; ++i)
            for (long j = 0; j < KW; ++j) {
              const long yy = y + i - static_cast<long>(ph), xx = x + j - static_cast<long>(pw);
              if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              acc += static_cast<long double>(w.at(o, c, i, j)) * in.at(c, yy, xx);
            }
        out.at(o, y, x) = static_cast<T>(acc);
      }
  return out;
}

template <typename T>
Tensor<T> dense_oracle(const Tensor<T>& x, const Tensor<T>& w, const std::optional<Tensor<T>>& bias) {
  Tensor<T> out({w.extent(0)});
  for (std::size_t o = 0; o < w.extent(0); ++o) {
    long double acc = bias ? (*bias)[o] : 0;
    for (std::size_t i = 0; i < w.extent(1); ++i) acc += static_cast<long double>(w.at(o, i)) * x[i];
    out[o] = static_cast<T>(acc);
  }
  return out;
}

/// Non-overlapping max windows of wh x ww over the last two axes of [C, H, W].
template <typename T>
Tensor<T> pool_max_oracle(const Tensor<T>& in, std::size_t wh, std::size_t ww) {
  const std::size_t C = in.extent(0), OH = in.extent(1) / wh, OW = in.extent(2) / ww;
  Tensor<T> out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x) {
        T best = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < wh; ++i)
          for (std::size_t j = 0; j < ww; ++j) best = std::max(best, in.at(c, y * wh + i, x * ww + j));
        out.at(c, y, x) = best;
      }
  return out;
}

/// Reduces one axis of a tensor by mean (max = false) or max.
template <typename T>
Tensor<T> reduce_axis_oracle(const Tensor<T>& in, std::size_t axis, bool max) {
  Shape out_shape;
  for (std::size_t a = 0; a < in.rank(); ++a)
    if (a != axis) out_shape.push_back(in.extent(a));
  if (out_shape.empty()) out_shape = {1};
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= in.extent(a);
  for (std::size_t a = axis + 1; a < in.rank(); ++a) inner *= in.extent(a);
  const std::size_t n = in.extent(axis);
  Tensor<T> out(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      long double acc = max ? -std::numeric_limits<long double>::infinity() : 0;
      for (std::size_t k = 0; k < n; ++k) {
        const long double v = in[(o * n + k) * inner + i];
        acc = max ? std::max(acc, v) : acc + v;
      }
      out[o * inner + i] = static_cast<T>(max ? acc : acc / n);
    }
  return out;
}

template <typename T>
Tensor<T> softmax_oracle(const Tensor<T>& in, std::size_t axis) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= in.extent(a);
  for (std::size_t a = axis + 1; a < in.rank(); ++a) inner *= in.extent(a);
  const std::size_t n = in.extent(axis);
  Tensor<T> out(in.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      long double z = 0;
      for (std::size_t k = 0; k < n; ++k) z += std::exp(static_cast<long double>(in[(o * n + k) * inner + i]));
      for (std::size_t k = 0; k < n; ++k) {
        out[(o * n + k) * inner + i] = static_cast<T>(std::exp(static_cast<long double>(in[(o * n + k) * inner + i])) / z);
      }
    }
  return out;
}

/// |DFT| of periodic-Hann-windowed, non-centered frames, by direct summation.
inline Tensor<double> stft_oracle(const std::vector<double>& x, std::size_t n_fft, std::size_t hop) {
  const std::size_t frames = (x.size() - n_fft) / hop + 1, bins = n_fft / 2 + 1;
  Tensor<double> out({frames, bins});
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t k = 0; k < bins; ++k) {
      long double re = 0, im = 0;
      for (std::size_t n = 0; n < n_fft; ++n) {
        const long double w = 0.5L - 0.5L * std::cos(2.0L * std::numbers::pi_v<long double> * n / n_fft);
        const long double phase = 2.0L * std::numbers::pi_v<long double> * ((k * n) % n_fft) / n_fft;
        re += w * x[f * hop + n] * std::cos(phase);
        im -= w * x[f * hop + n] * std::sin(phase);
      }
      out.at(f, k) = static_cast<double>(std::sqrt(re * re + im * im));
    }
  return out;
}

/// Mann-Whitney statistic over every positive/negative pair, ties count half.
inline double roc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return wins / pairs;
}

/// Average precision by enumerating, for each positive, the cut that ends at
/// it: items ranked no lower (higher score, or equal score and lower index).
inline double pr_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0, positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    positives += 1;
    double above = 0, hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] > s[i] || (s[j] == s[i] && j <= i)) {
        above += 1;
        hits += y[j];
      }
    }
    total += hits / above;
  }
  return total / positives;
}

// ---- fixtures ----

inline std::vector<double> sine(std::size_t n, double freq, double rate, double amp = 0.5) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate);
  return x;
}

inline std::vector<double> white_noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  SplitMix64 rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = amp * rng.uniform(-1.0, 1.0);
  return x;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("musicnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Patches of [frames, bands] filled with uniform noise in [-1, 1].
template <typename T>
std::vector<Tensor<T>> random_patches(const musicnn::ModelConfig& c, std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Tensor<T>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor<T>({c.dsp.patch_frames, c.dsp.n_mels}, rng));
  return out;
}

/// Finite-difference check of every trainable tensor of a 64-bit model under
/// mean BCE over a training-mode batch.
inline musicnn::GradCheckReport check_model_gradients(musicnn::Model<double>& model,
                                                      const std::vector<Tensor<double>>& patches,
                                                      const std::vector<Tensor<double>>& targets, double eps,
                                                      double tol) {
  using namespace musicnn;
  const double batch = static_cast<double>(patches.size());
  auto loss = [&] {
    const BatchPass<double> pass = forward_batch<double>(model, patches, BnMode::Training);
    double total = 0.0;
    for (std::size_t b = 0; b < patches.size(); ++b) total += bce_loss(pass.traces[b].output(), targets[b]).loss;
    return total / batch;
  };
  const BatchPass<double> pass = forward_batch<double>(model, patches, BnMode::Training);
  std::vector<Tensor<double>> grad_logits;
  for (std::size_t b = 0; b < patches.size(); ++b) {
    auto r = bce_loss(pass.traces[b].output(), targets[b]);
    for (auto& g : r.grad.values()) g /= batch;
    grad_logits.push_back(std::move(r.grad));
  }
  Gradients<double> grads = backward_batch<double>(model, pass, grad_logits);

  std::vector<Tensor<double>*> values;
  for_each_trainable(model.params, [&](const std::string&, Tensor<double>& t) { values.push_back(&t); });
  std::vector<GradCheckTarget> targets_list;
  std::size_t k = 0;
  for_each_trainable(grads, [&](const std::string& name, Tensor<double>& g) {
    targets_list.push_back({name, values[k++], &g});
  });
  return grad_check(loss, targets_list, eps, tol);
}

inline std::vector<Tensor<double>> random_targets(std::size_t n, std::size_t tags, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Tensor<double>> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<double> t({tags});
    for (auto& v : t.values()) v = static_cast<double>(rng.below(2));
    out.push_back(std::move(t));
  }
  return out;
}

/// 28 one-second clips at 16 kHz: even clips are 220 Hz tones ("tonal"),
/// odd clips white noise ("noise"); the first 20 form the train split.
inline std::filesystem::path write_two_genre_manifest(const std::filesystem::path& dir, std::uint64_t seed) {
  std::ofstream m(dir / "manifest.csv");
  m << "path,label,split\n";
  SplitMix64 rng(seed);
  for (int i = 0; i < 28; ++i) {
    const bool tone = i % 2 == 0;
    const std::string name = "clip" + std::to_string(i) + ".wav";
    const auto x = tone ? sine(16000, 220.0, 16000, rng.uniform(0.2, 0.8))
                        : white_noise(16000, rng.next(), rng.uniform(0.1, 0.5));
    musicnn::write_wav(dir / name, x, 16000);
    m << name << ',' << (tone ? "tonal" : "noise") << ',' << (i < 20 ? "train" : "test") << '\n';
  }
  return dir / "manifest.csv";
}

}  // namespace testing
