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

#include "musicnn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "musicnn/rng.hpp"
#include "musicnn/tagger.hpp"
#include "musicnn/transfer.hpp"

namespace musicnn {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, "TrainConfig: " + what); };
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (batch_size < 1) fail("batch_size must be at least 1");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) fail("bn_momentum must be in [0, 1]");
}

template <typename T>
BceResult<T> bce_loss(const Tensor<T>& predictions, const Tensor<T>& targets) {
  if (predictions.shape() != targets.shape() || predictions.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "bce_loss: predictions " + shape_string(predictions.shape()) +
                                              " vs targets " + shape_string(targets.shape()));
  }
  const std::size_t n = predictions.size();
  BceResult<T> r;
  r.grad = Tensor<T>(predictions.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = predictions[i];
    const double t = targets[i];
    if (!(p > 0.0 && p < 1.0)) {
      throw Error(ErrorCode::NumericFault, "bce_loss: prediction " + std::to_string(p) + " outside (0, 1)");
    }
    loss -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
    r.grad[i] = static_cast<T>((p - t) / static_cast<double>(n));
  }
  r.loss = static_cast<T>(loss / static_cast<double>(n));
  return r;
}

template <typename T>
void adam_step(std::vector<LayerParams<T>>& params, const std::vector<LayerParams<T>>& grads, AdamState<T>& state,
               const TrainConfig& config) {
  std::vector<Tensor<T>*> p_tensors;
  for_each_trainable(params, [&](const std::string&, Tensor<T>& t) { p_tensors.push_back(&t); });
  std::vector<const Tensor<T>*> g_tensors;
  for_each_trainable(grads, [&](const std::string&, const Tensor<T>& t) { g_tensors.push_back(&t); });
  if (p_tensors.size() != g_tensors.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam_step: parameter and gradient layouts differ");
  }
  if (state.m.empty()) {
    for (auto* t : p_tensors) {
      state.m.emplace_back(t->shape());
      state.v.emplace_back(t->shape());
    }
  }
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < p_tensors.size(); ++k) {
    Tensor<T>& p = *p_tensors[k];
    const Tensor<T>& g = *g_tensors[k];
    if (g.shape() != p.shape()) throw Error(ErrorCode::ShapeMismatch, "adam_step: gradient shape mismatch");
    Tensor<T>& m = state.m[k];
    Tensor<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = config.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.epsilon);
      p[i] = static_cast<T>(p[i] - update);
    }
    check_finite(p, "adam_step");
  }
}

std::string TrainLog::csv() const {
  std::string out = "epoch,loss\n";
  char buf[64];
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, epoch_loss[e]);
    out += buf;
  }
  return out;
}

template <typename T>
TrainLog fit(Model<T>& model, std::span<const Example<T>> data, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw Error(ErrorCode::InvalidArgument, "fit: empty dataset");
  for (const auto& ex : data) {
    if (ex.target.shape() != Shape{model.config.n_tags}) {
      throw Error(ErrorCode::ShapeMismatch, "fit: target " + shape_string(ex.target.shape()) + " does not match [" +
                                                std::to_string(model.config.n_tags) + "]");
    }
  }

  const std::size_t n = data.size();
  SplitMix64 rng(derive_seed(config.seed, "shuffle"));
  AdamState<T> state;
  TrainLog log;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
      std::sort(idx.begin(), idx.end());
      std::vector<Tensor<T>> patches;
      for (std::size_t i : idx) patches.push_back(data[i].patch);

      const BatchPass<T> pass = forward_batch<T>(model, patches, BnMode::Training);
      std::vector<Tensor<T>> grad_logits;
      const T scale = static_cast<T>(1.0 / static_cast<double>(idx.size()));
      for (std::size_t b = 0; b < idx.size(); ++b) {
        BceResult<T> r = bce_loss(pass.traces[b].output(), data[idx[b]].target);
        epoch_loss += static_cast<double>(r.loss);
        for (auto& g : r.grad.values()) g *= scale;
        grad_logits.push_back(std::move(r.grad));
      }
      const Gradients<T> grads = backward_batch<T>(model, pass, grad_logits);
      adam_step(model.params, grads, state, config);
      update_running_stats(model, pass, config.bn_momentum);
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
    if (!std::isfinite(log.epoch_loss.back())) throw Error(ErrorCode::NumericFault, "fit: loss is not finite");
  }
  return log;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

TrainJob TrainJob::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open training config '" + path.string() + "'");
  TrainJob job;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ":" + std::to_string(line_no) + ": " + what);
  };
  auto number = [&](const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      fail("malformed number '" + v + "'");
    }
    if (used != v.size()) fail("malformed number '" + v + "'");
    return x;
  };
  auto count = [&](const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) fail("malformed integer '" + v + "'");
    try {
      return static_cast<std::uint64_t>(std::stoull(v));
    } catch (const std::exception&) {
      fail("integer out of range '" + v + "'");
    }
    return std::uint64_t{0};
  };
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return p.is_relative() ? base / p : p;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    TrainConfig& t = job.train;
    if (key == "learning_rate") t.learning_rate = number(value);
    else if (key == "beta1") t.beta1 = number(value);
    else if (key == "beta2") t.beta2 = number(value);
    else if (key == "epsilon") t.epsilon = number(value);
    else if (key == "batch_size") t.batch_size = count(value);
    else if (key == "epochs") t.epochs = count(value);
    else if (key == "seed") t.seed = count(value);
    else if (key == "bn_momentum") t.bn_momentum = number(value);
    else if (key == "mode") {
      if (value == "float32") t.mode = NumericMode::Float32;
      else if (value == "float64") t.mode = NumericMode::Float64;
      else fail("mode must be float32 or float64");
    } else if (key == "architecture") job.architecture = value;
    else if (key == "manifest") job.manifest = resolve(value);
    else if (key == "log") job.log = resolve(value);
    else fail("unknown key '" + key + "'");
  }
  if (job.manifest.empty()) throw Error(ErrorCode::ConfigInvalid, path.string() + ": 'manifest' is required");
  job.train.validate();
  return job;
}

ModelConfig architecture_config(std::string_view name, std::size_t n_tags) {
  if (name == "toy_musicnn") return toy_musicnn_config(Backend::TemporalPooling, n_tags);
  if (name == "toy_musicnn_attention") return toy_musicnn_config(Backend::Attention, n_tags);
  if (name == "toy_vgg") return toy_vgg_config(n_tags);
  if (name == "musicnn") return musicnn_config(Backend::TemporalPooling, n_tags);
  if (name == "musicnn_attention") return musicnn_config(Backend::Attention, n_tags);
  if (name == "vgg") return vgg_config(n_tags);
  throw Error(ErrorCode::ConfigInvalid, "unknown architecture '" + std::string(name) +
                                            "' (toy_musicnn, toy_musicnn_attention, toy_vgg, musicnn, "
                                            "musicnn_attention, vgg)");
}

template <typename T>
std::pair<Model<T>, TrainLog> run_training(const TrainJob& job) {
  const DatasetManifest manifest = DatasetManifest::load(job.manifest);
  const ModelConfig config = architecture_config(job.architecture, manifest.labels.size());
  std::vector<Example<T>> data;
  for (const auto& row : manifest.rows) {
    if (row.split != "train") continue;
    Tensor<T> target({manifest.labels.size()});
    target[manifest.label_index(row.label)] = T(1);
    for (auto& p : model_patches<T>(load_wav(row.path), config)) data.push_back({std::move(p), target});
  }
  if (data.empty()) throw Error(ErrorCode::ConfigInvalid, "manifest has no train-split clips");
  Model<T> model = build_model<T>(config, Init::seeded(job.train.seed), manifest.labels);
  TrainLog log = fit<T>(model, data, job.train);
  return {std::move(model), std::move(log)};
}

template BceResult<float> bce_loss<float>(const Tensor<float>&, const Tensor<float>&);
template BceResult<double> bce_loss<double>(const Tensor<double>&, const Tensor<double>&);
template void adam_step<float>(std::vector<LayerParams<float>>&, const std::vector<LayerParams<float>>&,
                               AdamState<float>&, const TrainConfig&);
template void adam_step<double>(std::vector<LayerParams<double>>&, const std::vector<LayerParams<double>>&,
                                AdamState<double>&, const TrainConfig&);
template TrainLog fit<float>(Model<float>&, std::span<const Example<float>>, const TrainConfig&);
template TrainLog fit<double>(Model<double>&, std::span<const Example<double>>, const TrainConfig&);
template std::pair<Model<float>, TrainLog> run_training<float>(const TrainJob&);
template std::pair<Model<double>, TrainLog> run_training<double>(const TrainJob&);

}  // namespace musicnn
