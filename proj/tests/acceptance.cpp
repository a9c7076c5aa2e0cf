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

// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <regex>
#include <sstream>
#include <sys/wait.h>

#include "musicnn/dsp.hpp"
#include "musicnn/extractor.hpp"
#include "musicnn/model_store.hpp"
#include "musicnn/ops.hpp"
#include "musicnn/tagger.hpp"
#include "musicnn/transfer.hpp"
#include "support.hpp"

using namespace musicnn;
using testing::random_tensor;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    out.push_back(item);
  }
  return out;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Shell {
  int code;
  std::string out;
};

Shell shell(const std::string& cmd) {
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

LayerParams<double> random_layer(Shape w, bool bias, SplitMix64& rng) {
  LayerParams<double> p;
  p.name = "layer";
  p.weights = random_tensor<double>(w, rng);
  if (bias) p.bias = random_tensor<double>({w[0]}, rng);
  return p;
}

Outcome gradient_integrity() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0;
  for (const auto& c : {toy_musicnn_config(), toy_musicnn_config(Backend::Attention), toy_vgg_config()}) {
    auto m = build_model<double>(c, Init::seeded(7));
    const auto report = testing::check_model_gradients(m, testing::random_patches<double>(c, 3, 11),
                                                       testing::random_targets(3, c.n_tags, 13), 1e-5, 1e-4);
    worst = std::max(worst, report.max_relative_error());
    o.require(report.passed(), report.summary());
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60, "runtime " + fmt("%.1f s", secs));
  if (o.ok) o.detail = "max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs);
  return o;
}

Outcome oracle_equivalence() {
  Outcome o;
  SplitMix64 rng(2);
  const int trials = 100;
  double linear = 0, other = 0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t c = 1 + rng.below(3), h = 1 + rng.below(8), w = 1 + rng.below(8);
    const std::size_t kh = 1 + rng.below(h), kw = 1 + rng.below(w), ph = rng.below(3), pw = rng.below(3);
    const auto in = random_tensor<double>({c, h, w}, rng);
    const auto p = random_layer({1 + rng.below(4), c, kh, kw}, rng.below(2), rng);
    linear = std::max(linear, testing::max_relative_error(conv2d(in, p, {ph, pw}),
                                                          testing::conv2d_oracle(in, *p.weights, p.bias, ph, pw)));

    const std::size_t n = 1 + rng.below(12), m = 1 + rng.below(12);
    const auto d = random_layer({m, n}, rng.below(2), rng);
    const auto x = random_tensor<double>({n}, rng);
    linear = std::max(linear, testing::max_relative_error(dense(x, d), testing::dense_oracle(x, *d.weights, d.bias)));

    const std::size_t wh = 1 + rng.below(3), ww = 1 + rng.below(3);
    const auto pin = random_tensor<double>({1 + rng.below(3), wh * (1 + rng.below(3)), ww * (1 + rng.below(3))}, rng);
    const std::size_t axis = rng.below(3);
    other = std::max(other, testing::max_relative_error(pool_max(pin, wh, ww), testing::pool_max_oracle(pin, wh, ww)));
    other = std::max(other, testing::max_relative_error(pool_mean_over_axis(pin, axis),
                                                        testing::reduce_axis_oracle(pin, axis, false)));
    other = std::max(other, testing::max_relative_error(pool_max_over_axis(pin, axis),
                                                        testing::reduce_axis_oracle(pin, axis, true)));

    const auto sin = random_tensor<double>({1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(4)}, rng, -5, 5);
    const std::size_t sa = rng.below(3);
    other = std::max(other, testing::max_relative_error(softmax_over_axis(sin, sa), testing::softmax_oracle(sin, sa)));

    const std::size_t n_fft = 8 + rng.below(57), hop = 1 + rng.below(n_fft);
    const auto sig = testing::white_noise(n_fft + rng.below(4 * n_fft), rng.next());
    other = std::max(other, testing::max_relative_error(stft_magnitude(Waveform{sig, 16000}, n_fft, hop),
                                                        testing::stft_oracle(sig, n_fft, hop), 1e-9));
  }
  o.require(linear < 1e-10, "linear ops rel err " + fmt("%.2e", linear));
  o.require(other < 1e-6, "pooling/softmax/stft rel err " + fmt("%.2e", other));
  if (o.ok) o.detail = std::to_string(trials) + " shapes per op, linear " + fmt("%.1e", linear) + ", other " +
                       fmt("%.1e", other);
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  o.require(roc_auc(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<int>{1, 0, 1, 0}) == 0.75, "roc example");
  o.require(std::abs(pr_auc(std::vector<double>{0.9, 0.8, 0.7}, std::vector<int>{0, 1, 1}) - 0.583333) < 1e-6,
            "pr example");
  SplitMix64 rng(3);
  int instances = 0;
  double worst = 0;
  while (instances < 1000) {
    const std::size_t n = 2 + rng.below(11);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.below(2) ? rng.uniform() : static_cast<double>(rng.below(4)) / 4.0;
      y[i] = static_cast<int>(rng.below(2));
    }
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<long>(n)) continue;
    ++instances;
    worst = std::max(worst, std::abs(roc_auc(s, y) - testing::roc_oracle(s, y)));
    worst = std::max(worst, std::abs(pr_auc(s, y) - testing::pr_oracle(s, y)));
  }
  o.require(worst <= 1e-12, "max abs diff " + fmt("%.2e", worst));
  if (o.ok) o.detail = std::to_string(instances) + " instances, max abs diff " + fmt("%.1e", worst);
  return o;
}

Outcome memorization() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto c = toy_musicnn_config(Backend::TemporalPooling, 4);
  const auto patches = testing::random_patches<float>(c, 10, 21);
  const auto targets = testing::random_targets(10, c.n_tags, 22);
  std::vector<Example<float>> data;
  for (std::size_t i = 0; i < 10; ++i) data.push_back({patches[i], targets[i].cast<float>()});
  TrainConfig tc;
  tc.learning_rate = 0.02;
  tc.batch_size = 10;
  tc.epochs = 200;
  tc.seed = 5;
  auto a = build_model<float>(c, Init::seeded(7));
  auto b = build_model<float>(c, Init::seeded(7));
  const auto la = fit<float>(a, data, tc);
  const auto lb = fit<float>(b, data, tc);
  const double secs = seconds_since(t0);
  o.require(la.epoch_loss.back() < 0.05, "final loss " + fmt("%.4f", la.epoch_loss.back()));
  o.require(la.epoch_loss == lb.epoch_loss && a.params == b.params, "runs differ");
  o.require(secs < 300, "runtime " + fmt("%.1f s", secs));
  if (o.ok) o.detail = "final BCE " + fmt("%.4f", la.epoch_loss.back()) + ", " + fmt("%.1f s", secs) + " for two runs";
  return o;
}

Outcome attention_mechanism() {
  Outcome o;
  const auto c = toy_musicnn_config(Backend::Attention, 1);
  const double uniform = 1.0 / static_cast<double>(c.dsp.patch_frames);
  std::string weights;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    auto model = build_model<float>(c, Init::seeded(seed));
    SplitMix64 rng(seed + 1000);
    std::vector<Example<float>> data;
    for (std::size_t i = 0; i < 64; ++i) {
      Tensor<float> p({c.dsp.patch_frames, c.dsp.n_mels});
      for (auto& v : p.values()) v = static_cast<float>(rng.normal());
      const float y = static_cast<float>(i % 2);
      for (std::size_t m = 0; m < c.dsp.n_mels; ++m) p.at(0, m) = y ? 1.0f : -1.0f;
      data.push_back({p, Tensor<float>({1}, y)});
    }
    TrainConfig tc;
    tc.learning_rate = 0.01;
    tc.epochs = 100;
    tc.seed = seed;
    fit<float>(model, data, tc);
    double w0 = 0;
    for (const auto& ex : data) {
      const auto trace = forward(ex.patch, model);
      w0 += trace.at("attention_weights")[0];
    }
    w0 /= static_cast<double>(data.size());
    weights += (weights.empty() ? "" : " ") + fmt("%.3f", w0);
    o.require(w0 > uniform, "seed " + std::to_string(seed) + ": weight " + fmt("%.4f", w0));
  }
  if (o.ok) o.detail = "mean weight[0] per seed " + weights + " vs 1/T " + fmt("%.4f", uniform);
  return o;
}

Outcome contract_conformance() {
  Outcome o;
  using Keys = std::vector<std::string>;
  auto sorted = [](Keys k) {
    std::sort(k.begin(), k.end());
    return k;
  };
  const Keys musicnn_keys{"timbral", "temporal", "cnn1", "cnn2", "cnn3", "mean_pool", "max_pool", "penultimate"};
  const Keys vgg_keys{"pool1", "pool2", "pool3", "pool4", "pool5"};
  o.require(sorted(feature_keys(musicnn_config())) == sorted(musicnn_keys), "musicnn feature keys");
  o.require(sorted(feature_keys(vgg_config())) == sorted(vgg_keys), "vgg feature keys");
  o.require(registry_names() == Keys{"MTT_musicnn", "MSD_musicnn", "MSD_musicnn_big", "MTT_vgg", "MSD_vgg"},
            "registry names");
  const auto mtt = split_list(
      "guitar, classical, slow, techno, strings, drums, electronic, rock, fast, piano, ambient, beat, violin, vocal, "
      "synth, female, indian, opera, male, singing, vocals, no vocals, harpsichord, loud, quiet, flute, woman, male "
      "vocal, no vocal, pop, soft, sitar, solo, man, classic, choir, voice, new age, dance, male voice, female vocal, "
      "beats, harp, cello, no voice, weird, country, metal, female voice, choral");
  const auto msd = split_list(
      "rock, pop, alternative, indie, electronic, female vocalists, dance, 00s, alternative rock, jazz, beautiful, "
      "metal, chillout, male vocalists, classic rock, soul, indie rock, mellow, electronica, 80s, folk, 90s, chill, "
      "instrumental, punk, oldies, blues, hard rock, ambient, acoustic, experimental, female vocalist, guitar, "
      "hip-hop, 70s, party, country, easy listening, sexy, catchy, funk, electro, heavy metal, progressive rock, 60s, "
      "rnb, indie pop, sad, house, happy");
  o.require(mtt.size() == 50 && msd.size() == 50, "reference vocabularies");
  for (const auto& name : registry_names()) {
    const auto& expected = name.starts_with("MTT") ? mtt : msd;
    o.require(registry_get(name).tags == expected, name + " vocabulary");
    o.require(feature_keys(registry_get(name).config) ==
                  feature_keys(registry_get(name).config.family == Family::Vgg ? vgg_config() : musicnn_config()),
              name + " feature keys");
  }
  if (o.ok) o.detail = "8 musicnn keys, 5 vgg keys, 5 models, 2 x 50 tags";
  return o;
}

Outcome cli_conformance() {
  Outcome o;
  const auto dir = testing::scratch_dir("acceptance_cli");
  auto x = testing::sine(4 * 16000, 440.0, 16000, 0.4);
  const auto noise = testing::white_noise(x.size(), 17, 0.1);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += noise[i];
  write_wav(dir / "clip.wav", x, 16000);
  const std::string exe = MUSICNN_TAGGER_EXE;
  const std::string wav = (dir / "clip.wav").string();
  const std::regex line(R"([^\t\n]+\t\d\.\d{6}\n)");

  auto expected = [&](const std::string& model, std::size_t n) {
    return format_listing(top_tags(compute_taggram(dir / "clip.wav", registry_model<float>(model)), n));
  };
  auto well_formed = [&](const std::string& listing, std::size_t n) {
    std::size_t count = 0;
    for (auto it = std::sregex_iterator(listing.begin(), listing.end(), line); it != std::sregex_iterator(); ++it)
      ++count;
    return count == n && std::count(listing.begin(), listing.end(), '\n') == static_cast<long>(n);
  };

  const Shell printed = shell(exe + " " + wav + " --model MTT_musicnn --topN 10 --print 2>/dev/null");
  o.require(printed.code == 0, "--print exit code " + std::to_string(printed.code));
  o.require(well_formed(printed.out, 10), "--print listing shape");
  o.require(printed.out == expected("MTT_musicnn", 10), "--print listing differs from library");

  const auto saved = dir / "clip.tags";
  const Shell save = shell(exe + " " + wav + " -m MTT_vgg --topN 5 --save " + saved.string() + " 2>/dev/null");
  o.require(save.code == 0, "--save exit code " + std::to_string(save.code));
  o.require(save.out.empty(), "--save wrote to stdout");
  const std::string file = slurp(saved);
  o.require(well_formed(file, 5), "--save listing shape");
  o.require(file == expected("MTT_vgg", 5), "--save listing differs from library");

  o.require(shell(exe + " " + (dir / "missing.wav").string() + " -m MTT_vgg 2>/dev/null").code == 1,
            "runtime error exit code");
  o.require(shell(exe + " " + wav + " --topN 51 -m MTT_vgg 2>/dev/null").code == 1, "topN range exit code");
  o.require(shell(exe + " " + wav + " --topN 2>/dev/null").code == 2, "usage error exit code");
  if (o.ok) o.detail = "--model/--topN/--print and -m/--topN/--save, exit codes 0/1/2";
  return o;
}

Outcome round_trip() {
  Outcome o;
  const auto dir = testing::scratch_dir("acceptance_store");
  std::size_t outputs = 0;
  for (const auto& c : {toy_musicnn_config(), toy_musicnn_config(Backend::Attention), toy_vgg_config()}) {
    auto m = build_model<float>(c, Init::seeded(3));
    calibrate_batchnorm<float>(m, testing::random_patches<float>(c, 4, 5));
    save_model(m, dir / "m.mcn");
    const auto back = load_model<float>(dir / "m.mcn");
    for (const auto& patch : testing::random_patches<float>(c, 3, 7)) {
      const auto a = forward(patch, m).output(), b = forward(patch, back).output();
      o.require(a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0,
                "toy outputs differ");
      ++outputs;
    }
  }
  const auto full = registry_model<float>("MTT_musicnn");
  save_model(full, dir / "mtt.mcn", "MTT_musicnn");
  const auto loaded = load_model<float>(dir / "mtt.mcn");
  const auto patch = testing::random_patches<float>(full.config, 1, 9)[0];
  const auto a = forward(patch, full).output(), b = forward(patch, loaded).output();
  o.require(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0, "MTT_musicnn outputs differ");
  ++outputs;

  const auto bytes = encode_container(build_model<float>(toy_musicnn_config(), Init::seeded(2)));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  o.require(code_of([&] { decode_container<float>(truncated); }) == ErrorCode::PayloadTruncated, "truncation");

  auto tampered = bytes;
  const std::string from = "cnn2_conv.weights 4,4,3,1", to = "cnn2_conv.weights 4,4,1,3";
  const auto at = std::search(tampered.begin(), tampered.end(), from.begin(), from.end());
  o.require(at != tampered.end(), "tamper target not found");
  if (at != tampered.end()) std::copy(to.begin(), to.end(), at);
  o.require(code_of([&] { decode_container<float>(tampered); }) == ErrorCode::ShapeMismatch, "shape tamper");
  if (o.ok) o.detail = std::to_string(outputs) + " bit-identical outputs, PayloadTruncated, ShapeMismatch";
  return o;
}

Outcome pipeline_end_to_end() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto dir = testing::scratch_dir("acceptance_pipeline");
  const auto manifest = DatasetManifest::load(testing::write_two_genre_manifest(dir, 9));
  std::string accs;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto model = build_model<float>(toy_musicnn_config(), Init::seeded(seed));
    PipelineConfig cfg;
    cfg.svm.seed = seed;
    const auto a = run_pipeline<float>(manifest, model, cfg);
    const auto b = run_pipeline<float>(manifest, model, cfg);
    o.require(a.text() == b.text(), "seed " + std::to_string(seed) + " report differs between runs");
    o.require(a.test_accuracy >= 0.9, "seed " + std::to_string(seed) + " accuracy " + fmt("%.3f", a.test_accuracy));
    accs += (accs.empty() ? "" : " ") + fmt("%.3f", a.test_accuracy);
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120, "runtime " + fmt("%.1f s", secs));
  if (o.ok) o.detail = "test accuracy per seed " + accs + ", " + fmt("%.1f s", secs);
  return o;
}

Outcome dsp_invariants() {
  Outcome o;
  const DspConfig cfg;
  const auto silent = log_mel(Waveform{std::vector<double>(16000, 0.0), 16000}, cfg);
  for (double v : silent.values.values()) o.require(v == std::log(cfg.log_offset), "silence value");

  const auto centers = mel_center_frequencies(cfg);
  // Every tone the STFT resolves on a bin, plus an off-bin concert A.
  std::vector<double> tones{440.0};
  for (std::size_t k = 1; k < cfg.fft_size / 2; ++k)
    tones.push_back(static_cast<double>(k * cfg.sample_rate) / static_cast<double>(cfg.fft_size));
  for (double freq : tones) {
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < centers.size(); ++i)
      if (std::abs(centers[i] - freq) < std::abs(centers[nearest] - freq)) nearest = i;
    const auto m = log_mel(Waveform{testing::sine(16000, freq, 16000), 16000}, cfg);
    for (std::size_t f = 0; f < m.frames(); ++f) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < cfg.n_mels; ++b)
        if (m.values.at(f, b) > m.values.at(f, best)) best = b;
      o.require(best == nearest, "tone " + fmt("%.0f Hz", freq) + " argmax band " + std::to_string(best));
    }
  }

  SplitMix64 rng(10);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = cfg.samples_for_frames(cfg.patch_frames) + rng.below(8 * 16000);
    const auto mel = log_mel(Waveform{testing::white_noise(n, rng.next()), 16000}, cfg);
    const std::size_t frames = (n - cfg.fft_size) / cfg.hop_size + 1;
    const std::size_t patches = (frames - cfg.patch_frames) / cfg.patch_hop_frames + 1;
    o.require(mel.frames() == frames, "frame count for " + std::to_string(n) + " samples");
    o.require(patchify(mel).size() == patches, "patch count for " + std::to_string(n) + " samples");
  }
  if (o.ok) o.detail = "silence, " + std::to_string(tones.size()) + " tones, 50 random lengths";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},   {"oracle equivalence", oracle_equivalence},
      {"metric oracles", metric_oracles},           {"memorization", memorization},
      {"attention mechanism", attention_mechanism}, {"contract conformance", contract_conformance},
      {"cli conformance", cli_conformance},         {"round trip", round_trip},
      {"pipeline end to end", pipeline_end_to_end}, {"dsp invariants", dsp_invariants},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.ok;
    std::cout << (o.ok ? "[PASS] " : "[FAIL] ") << i + 1 << ' ' << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << criteria.size() - static_cast<std::size_t>(failed) << '/' << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
