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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <sys/wait.h>

#include "musicnn/model_store.hpp"
#include "musicnn/tagger.hpp"
#include "support.hpp"

using namespace musicnn;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = tagger_main(args, out, err);
  return {code, out.str(), err.str()};
}

// Toy model on disk plus WAV fixtures sized in toy patches.
struct Fixture {
  std::filesystem::path dir = testing::scratch_dir("tagger");
  ModelConfig config = toy_musicnn_config(Backend::TemporalPooling, 6);
  std::filesystem::path model = dir / "toy.mcn";
  std::size_t patch_samples = config.dsp.samples_for_frames(config.dsp.patch_frames);

  Fixture() {
    auto m = build_model<float>(config, Init::seeded(4), {"a", "b", "c", "d", "e", "f"});
    calibrate_batchnorm<float>(m, testing::random_patches<float>(config, 4, 1));
    save_model(m, model);
  }

  std::filesystem::path wav(const std::string& name, const std::vector<double>& x) const {
    write_wav(dir / name, x, config.dsp.sample_rate);
    return dir / name;
  }
};

Taggram taggram_of(std::vector<std::vector<double>> rows) {
  Taggram t;
  const std::size_t n = rows[0].size();
  t.values = Tensor<double>({rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < n; ++c) t.values.at(r, c) = rows[r][c];
  for (std::size_t c = 0; c < n; ++c) t.tags.push_back("tag" + std::to_string(c));
  return t;
}

}  // namespace

TEST_CASE("top_tags ordering") {
  const auto top = top_tags(taggram_of({{0.9, 0.1, 0.5}}), 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].tag == "tag0");
  CHECK(top[0].score == 0.9);
  CHECK(top[1].tag == "tag2");
  CHECK(top[1].score == 0.5);

  const auto ties = top_tags(taggram_of({{0.3, 0.3, 0.3, 0.3}}), 3);
  CHECK(ties[0].tag == "tag0");
  CHECK(ties[1].tag == "tag1");
  CHECK(ties[2].tag == "tag2");

  SplitMix64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> rows(5, std::vector<double>(50));
    for (auto& r : rows)
      for (auto& v : r) v = static_cast<double>(1 + rng.below(7)) / 8.0;
    const auto t = taggram_of(rows);
    std::vector<double> mean(50, 0.0);
    for (std::size_t c = 0; c < 50; ++c) {
      for (const auto& r : rows) mean[c] += r[c];
      mean[c] /= 5.0;
    }
    // Dyadic values keep sums exact; the oracle selects maxima, lowest index first.
    std::vector<bool> used(50, false);
    const auto got = top_tags(t, 50);
    for (std::size_t k = 0; k < 50; ++k) {
      std::size_t best = 50;
      for (std::size_t c = 0; c < 50; ++c)
        if (!used[c] && (best == 50 || mean[c] > mean[best])) best = c;
      used[best] = true;
      CHECK(got[k].tag == "tag" + std::to_string(best));
      CHECK(got[k].score == doctest::Approx(mean[best]).epsilon(1e-12));
    }
  }

  CHECK_THROWS_AS(top_tags(taggram_of({{0.5, 0.5}}), 0), Error);
  CHECK_THROWS_AS(top_tags(taggram_of({{0.5, 0.5}}), 3), Error);
}

TEST_CASE("listing format") {
  const std::vector<TagScore> tags{{"rock", 0.5}, {"no vocals", 0.1234567}, {"x", 1e-9}};
  CHECK(format_listing(tags) == "rock\t0.500000\nno vocals\t0.123457\nx\t0.000000\n");
}

TEST_CASE("taggram rows follow patches") {
  Fixture fx;
  const auto model = load_model<float>(fx.model);
  const auto one = testing::sine(fx.patch_samples, 220.0, 16000);
  const auto g1 = compute_taggram(fx.wav("one.wav", one), model);
  CHECK(g1.values.shape() == Shape{1, 6});
  CHECK(g1.patch_times == std::vector<double>{0.0});
  for (double v : g1.values.values()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }

  // Periodic in the patch hop (patch_frames * hop_size samples), so every
  // patch sees the same audio.
  const std::size_t stride = fx.config.dsp.patch_frames * fx.config.dsp.hop_size;
  const auto base = testing::white_noise(stride, 3);
  std::vector<double> twice(3 * stride + fx.config.dsp.fft_size);
  for (std::size_t i = 0; i < twice.size(); ++i) twice[i] = base[i % stride];
  const auto g = compute_taggram(fx.wav("twice.wav", twice), model);
  REQUIRE(g.patches() == 3);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(std::abs(g.values.at(0, c) - g.values.at(1, c)) < 1e-6);
    CHECK(std::abs(g.values.at(0, c) - g.values.at(2, c)) < 1e-6);
  }
  CHECK(g.patch_times[1] == doctest::Approx(static_cast<double>(stride) / 16000));

  const auto zero = build_model<float>(fx.config, Init::zeros());
  const auto gz = compute_taggram(fx.wav("z.wav", one), zero);
  for (double v : gz.values.values()) CHECK(v == 0.5);

  const auto again = compute_taggram(fx.dir / "twice.wav", model);
  CHECK(again.values == g.values);

  CHECK_THROWS_AS(compute_taggram(fx.wav("short.wav", std::vector<double>(100, 0.1)), model), Error);
}

TEST_CASE("cli in process") {
  Fixture fx;
  const auto wav = fx.wav("clip.wav", testing::sine(2 * fx.patch_samples, 440.0, 16000));
  const std::string model = fx.model.string();

  auto r = run({wav.string(), "--model", model, "--topN", "4", "--print"});
  CHECK(r.code == 0);
  CHECK(count_lines(r.out) == 4);
  const auto expected = format_listing(top_tags(compute_taggram(wav, load_model<float>(fx.model)), 4));
  CHECK(r.out == expected);

  const auto saved = fx.dir / "out.tags";
  r = run({wav.string(), "-m", model, "--topN", "5", "--save", saved.string()});
  CHECK(r.code == 0);
  CHECK(r.out.empty());
  CHECK(count_lines(slurp(saved)) == 5);

  r = run({wav.string(), "-m", model, "--topN", "5", "--save", saved.string(), "--print"});
  CHECK(r.code == 0);
  CHECK(r.out == slurp(saved));

  r = run({wav.string(), "-m", model});
  CHECK(r.code == 0);
  CHECK(count_lines(r.out) == 3);

  r = run({(fx.dir / "missing.wav").string(), "-m", model});
  CHECK(r.code == 1);
  CHECK(r.err.find("IoError") != std::string::npos);
  r = run({wav.string(), "-m", "MTT_nope"});
  CHECK(r.code == 1);
  CHECK(r.err.find("UnknownModel") != std::string::npos);
  r = run({wav.string(), "-m", model, "--topN", "7"});
  CHECK(r.code == 1);
  CHECK(r.err.find("TopNOutOfRange") != std::string::npos);

  CHECK(run({}).code == 2);
  CHECK(run({wav.string(), "--topN", "many"}).code == 2);
  CHECK(run({wav.string(), "--bogus"}).code == 2);
  r = run({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("--topN") != std::string::npos);
}

TEST_CASE("tagger executable") {
  Fixture fx;
  const auto wav = fx.wav("exe.wav", testing::sine(fx.patch_samples, 440.0, 16000));
  const std::string cmd = std::string(MUSICNN_TAGGER_EXE) + " " + wav.string() + " -m " + fx.model.string() +
                          " --topN 2 --print 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(out == format_listing(top_tags(compute_taggram(wav, load_model<float>(fx.model)), 2)));

  const std::string bad = std::string(MUSICNN_TAGGER_EXE) + " " + (fx.dir / "missing.wav").string() + " 2>/dev/null";
  CHECK(WEXITSTATUS(std::system(bad.c_str())) == 1);
  const std::string usage = std::string(MUSICNN_TAGGER_EXE) + " --topN 2>/dev/null";
  CHECK(WEXITSTATUS(std::system(usage.c_str())) == 2);
}
