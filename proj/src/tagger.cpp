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

#include "musicnn/tagger.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "musicnn/dsp.hpp"
#include "musicnn/model_store.hpp"

namespace musicnn {

template <typename T>
std::vector<Tensor<T>> model_patches(const Waveform& audio, const ModelConfig& config) {
  std::vector<Tensor<T>> out;
  for (auto& p : patchify(log_mel(audio, config.dsp))) {
    if constexpr (std::is_same_v<T, double>) {
      out.push_back(std::move(p));
    } else {
      out.push_back(p.template cast<T>());
    }
  }
  return out;
}

template <typename T>
Taggram compute_taggram(const Waveform& audio, const Model<T>& model) {
  const auto patches = model_patches<T>(audio, model.config);
  Taggram g;
  g.tags = model.tags;
  g.values = Tensor<double>({patches.size(), model.config.n_tags});
  for (std::size_t p = 0; p < patches.size(); ++p) {
    const ForwardTrace<T> trace = forward(patches[p], model);
    const Tensor<T>& out = trace.output();
    for (std::size_t k = 0; k < out.size(); ++k) g.values.at(p, k) = static_cast<double>(out[k]);
    g.patch_times.push_back(model.config.dsp.patch_start_seconds(p));
  }
  return g;
}

template <typename T>
Taggram compute_taggram(const std::filesystem::path& path, const Model<T>& model) {
  return compute_taggram(load_wav(path), model);
}

std::vector<TagScore> top_tags(const Taggram& taggram, std::size_t top_n) {
  const std::size_t n_tags = taggram.tags.size();
  if (top_n < 1 || top_n > n_tags) {
    throw Error(ErrorCode::TopNOutOfRange, "topN " + std::to_string(top_n) + " outside [1, " + std::to_string(n_tags) + "]");
  }
  const std::size_t rows = taggram.patches();
  std::vector<double> mean(n_tags, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < n_tags; ++k) mean[k] += taggram.values.at(r, k);
  for (double& m : mean) m /= static_cast<double>(rows);

  std::vector<std::size_t> order(n_tags);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] > mean[b]; });
  std::vector<TagScore> out;
  for (std::size_t i = 0; i < top_n; ++i) out.push_back({taggram.tags[order[i]], mean[order[i]]});
  return out;
}

std::string format_listing(std::span<const TagScore> tags) {
  std::string out;
  char buf[64];
  for (const auto& t : tags) {
    std::snprintf(buf, sizeof buf, "\t%.6f\n", t.score);
    out += t.tag;
    out += buf;
  }
  return out;
}

int tagger_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tag a WAV file with a music auto-tagging model"};
  std::string file;
  std::string model_name = "MTT_musicnn";
  std::size_t top_n = 3;
  bool print = false;
  std::string save_path;
  app.add_option("file", file, "Input WAV file (PCM16 or float32, mono or stereo)")->required();
  app.add_option("-m,--model", model_name, "Registry model name or .mcn container path")->capture_default_str();
  app.add_option("--topN", top_n, "Number of tags to list")->capture_default_str();
  app.add_flag("--print", print, "Write the listing to standard output (default when no --save)");
  app.add_option("--save", save_path, "Write the listing to this file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "tagger: " << e.what() << '\n' << "Run with --help for usage.\n";
    return 2;
  }

  try {
    const Model<float> model = resolve_model<float>(model_name);
    const Taggram taggram = compute_taggram(std::filesystem::path(file), model);
    const std::string listing = format_listing(top_tags(taggram, top_n));
    if (!save_path.empty()) {
      std::ofstream f(save_path, std::ios::binary);
      if (!f) throw Error(ErrorCode::IoError, "cannot write '" + save_path + "'");
      f << listing;
      if (!f) throw Error(ErrorCode::IoError, "short write to '" + save_path + "'");
    }
    if (print || save_path.empty()) out << listing;
    return 0;
  } catch (const std::exception& e) {
    err << "tagger: " << e.what() << '\n';
    return 1;
  }
}

template std::vector<Tensor<float>> model_patches<float>(const Waveform&, const ModelConfig&);
template std::vector<Tensor<double>> model_patches<double>(const Waveform&, const ModelConfig&);
template Taggram compute_taggram<float>(const Waveform&, const Model<float>&);
template Taggram compute_taggram<double>(const Waveform&, const Model<double>&);
template Taggram compute_taggram<float>(const std::filesystem::path&, const Model<float>&);
template Taggram compute_taggram<double>(const std::filesystem::path&, const Model<double>&);

}  // namespace musicnn
