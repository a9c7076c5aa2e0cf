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

#include "musicnn/architectures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>

#include "musicnn/rng.hpp"

namespace musicnn {

// ---- config -------------------------------------------------------------------

std::string_view to_string(Family family) { return family == Family::Musicnn ? "musicnn" : "vgg"; }

std::string_view to_string(Backend backend) {
  return backend == Backend::TemporalPooling ? "temporal_pooling" : "attention";
}

Family parse_family(std::string_view text) {
  if (text == "musicnn") return Family::Musicnn;
  if (text == "vgg") return Family::Vgg;
  throw Error(ErrorCode::ConfigInvalid, "unknown family '" + std::string(text) + "'");
}

Backend parse_backend(std::string_view text) {
  if (text == "temporal_pooling") return Backend::TemporalPooling;
  if (text == "attention") return Backend::Attention;
  throw Error(ErrorCode::ConfigInvalid, "unknown backend '" + std::string(text) + "'");
}

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::ConfigInvalid, what); }

std::size_t pool_height_product(const ModelConfig& c) {
  std::size_t p = 1;
  for (const auto& s : c.vgg_pool_shapes) p *= s.h;
  return p;
}

std::size_t pool_width_product(const ModelConfig& c) {
  std::size_t p = 1;
  for (const auto& s : c.vgg_pool_shapes) p *= s.w;
  return p;
}

std::string indexed(std::string_view prefix, std::size_t i, std::string_view suffix) {
  return std::string(prefix) + std::to_string(i) + std::string(suffix);
}

}  // namespace

void ModelConfig::validate() const {
  dsp.validate();
  if (n_tags < 1) config_error("n_tags must be at least 1");
  if (family == Family::Musicnn) {
    if (timbral_filter_heights.empty()) config_error("musicnn needs at least one timbral filter height");
    for (double f : timbral_filter_heights) {
      if (!(f > 0.0 && f <= 1.0)) config_error("timbral filter height " + std::to_string(f) + " outside (0, 1]");
      if (std::lround(f * static_cast<double>(dsp.n_mels)) < 1) {
        config_error("timbral filter height " + std::to_string(f) + " rounds to zero mel bands");
      }
    }
    if (timbral_channels < 1) config_error("timbral_channels must be at least 1");
    if (temporal_filter_lengths.empty()) config_error("musicnn needs at least one temporal filter length");
    for (std::size_t len : temporal_filter_lengths) {
      if (len % 2 == 0) config_error("temporal filter length " + std::to_string(len) + " must be odd");
    }
    if (temporal_channels < 1) config_error("temporal_channels must be at least 1");
    if (midend_channels < 1) config_error("midend_channels must be at least 1");
    if (midend_kernel % 2 == 0) config_error("midend_kernel must be odd");
    if (penultimate_units < 1) config_error("penultimate_units must be at least 1");
  } else {
    if (vgg_block_channels.size() != 5) config_error("vgg needs exactly five block channel counts");
    if (vgg_pool_shapes.size() != 5) config_error("vgg needs exactly five pool shapes");
    for (std::size_t c : vgg_block_channels) {
      if (c < 1) config_error("vgg block channels must be at least 1");
    }
    for (const auto& s : vgg_pool_shapes) {
      if (s.h < 1 || s.w < 1) config_error("vgg pool extents must be at least 1");
    }
    if (dsp.n_mels % pool_width_product(*this) != 0) {
      config_error("product of vgg pool widths (" + std::to_string(pool_width_product(*this)) +
                   ") does not divide n_mels (" + std::to_string(dsp.n_mels) + ")");
    }
    if (pool_height_product(*this) > 2 * dsp.patch_frames) {
      config_error("product of vgg pool heights (" + std::to_string(pool_height_product(*this)) +
                   ") exceeds twice patch_frames (" + std::to_string(dsp.patch_frames) + ")");
    }
  }
}

std::vector<std::size_t> ModelConfig::timbral_widths() const {
  std::vector<std::size_t> widths;
  for (double f : timbral_filter_heights) {
    widths.push_back(static_cast<std::size_t>(std::lround(f * static_cast<double>(dsp.n_mels))));
  }
  return widths;
}

std::size_t ModelConfig::frontend_channels() const {
  return timbral_filter_heights.size() * timbral_channels + temporal_filter_lengths.size() * temporal_channels;
}

std::size_t ModelConfig::stack_channels() const { return frontend_channels() + 3 * midend_channels; }

std::size_t ModelConfig::vgg_input_frames() const {
  const std::size_t ph = pool_height_product(*this);
  return (dsp.patch_frames + ph - 1) / ph * ph;
}

ModelConfig musicnn_config(Backend backend, std::size_t n_tags) {
  ModelConfig c;
  c.family = Family::Musicnn;
  c.backend = backend;
  c.n_tags = n_tags;
  return c;
}

ModelConfig musicnn_big_config(std::size_t n_tags) {
  ModelConfig c = musicnn_config(Backend::TemporalPooling, n_tags);
  c.midend_channels = 512;
  c.penultimate_units = 500;
  return c;
}

ModelConfig vgg_config(std::size_t n_tags) {
  ModelConfig c;
  c.family = Family::Vgg;
  c.n_tags = n_tags;
  return c;
}

namespace {

DspConfig toy_dsp() {
  DspConfig d;
  d.n_mels = 16;
  d.patch_frames = 24;
  d.patch_hop_frames = 24;
  return d;
}

}  // namespace

ModelConfig toy_musicnn_config(Backend backend, std::size_t n_tags) {
  ModelConfig c;
  c.family = Family::Musicnn;
  c.backend = backend;
  c.n_tags = n_tags;
  c.dsp = toy_dsp();
  c.timbral_filter_heights = {0.5};
  c.timbral_channels = 3;
  c.temporal_filter_lengths = {9};
  c.temporal_channels = 2;
  c.midend_channels = 4;
  c.midend_kernel = 3;
  c.penultimate_units = 6;
  return c;
}

ModelConfig toy_vgg_config(std::size_t n_tags) {
  ModelConfig c;
  c.family = Family::Vgg;
  c.n_tags = n_tags;
  c.dsp = toy_dsp();
  c.vgg_block_channels = {2, 3, 3, 4, 4};
  c.vgg_pool_shapes = {{2, 2}, {2, 2}, {2, 2}, {3, 2}, {1, 1}};
  return c;
}

std::vector<LayerSpec> layer_specs(const ModelConfig& c) {
  c.validate();
  std::vector<LayerSpec> specs;
  auto add_conv_bn = [&](std::string stem, Shape weights) {
    const std::size_t out = weights[0];
    specs.push_back({stem + "_conv", LayerKind::Conv, std::move(weights), false, 0});
    specs.push_back({stem + "_bn", LayerKind::BatchNorm, {}, false, out});
  };

  if (c.family == Family::Musicnn) {
    specs.push_back({"input_bn", LayerKind::BatchNorm, {}, false, 1});
    const auto widths = c.timbral_widths();
    for (std::size_t i = 0; i < widths.size(); ++i) {
      add_conv_bn(indexed("timbral", i, ""), {c.timbral_channels, 1, 7, widths[i]});
    }
    for (std::size_t j = 0; j < c.temporal_filter_lengths.size(); ++j) {
      add_conv_bn(indexed("temporal", j, ""), {c.temporal_channels, 1, c.temporal_filter_lengths[j], 1});
    }
    std::size_t in = c.frontend_channels();
    for (std::size_t k = 1; k <= 3; ++k) {
      add_conv_bn(indexed("cnn", k, ""), {c.midend_channels, in, c.midend_kernel, 1});
      in = c.midend_channels;
    }
    std::size_t pen_in = 2 * c.stack_channels();
    if (c.backend == Backend::Attention) {
      specs.push_back({"attention_dense", LayerKind::Dense, {1, c.stack_channels()}, false, 0});
      pen_in = c.stack_channels();
    }
    specs.push_back({"penultimate_dense", LayerKind::Dense, {c.penultimate_units, pen_in}, false, 0});
    specs.push_back({"penultimate_bn", LayerKind::BatchNorm, {}, false, c.penultimate_units});
    specs.push_back({"output_dense", LayerKind::Dense, {c.n_tags, c.penultimate_units}, true, 0});
  } else {
    std::size_t in = 1;
    for (std::size_t b = 0; b < 5; ++b) {
      add_conv_bn(indexed("block", b + 1, ""), {c.vgg_block_channels[b], in, 3, 3});
      in = c.vgg_block_channels[b];
    }
    const std::size_t h = c.vgg_input_frames() / pool_height_product(c);
    const std::size_t w = c.dsp.n_mels / pool_width_product(c);
    specs.push_back({"output_dense", LayerKind::Dense, {c.n_tags, in * h * w}, true, 0});
  }
  return specs;
}

std::size_t trainable_parameter_count(const ModelConfig& config) {
  std::size_t total = 0;
  for (const auto& s : layer_specs(config)) {
    if (s.kind == LayerKind::BatchNorm) {
      total += 2 * s.channels;
    } else {
      total += shape_size(s.weights) + (s.bias ? s.weights[0] : 0);
    }
  }
  return total;
}

// ---- model --------------------------------------------------------------------

template <typename T>
std::size_t Model<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name == name) return i;
  }
  throw Error(ErrorCode::ShapeMismatch, "model has no layer '" + std::string(name) + "'");
}

template <typename T>
Model<T> build_model(const ModelConfig& config, Init init, std::vector<std::string> tags) {
  const auto specs = layer_specs(config);
  if (tags.empty()) {
    for (std::size_t i = 0; i < config.n_tags; ++i) tags.push_back("tag" + std::to_string(i));
  }
  Model<T> model{config, {}, std::move(tags)};
  const bool zeros = init.kind == Init::Kind::Zeros;
  for (const auto& spec : specs) {
    LayerParams<T> p;
    p.name = spec.name;
    if (spec.kind == LayerKind::BatchNorm) {
      p.bn_gamma = Tensor<T>::full({spec.channels}, zeros ? T(0) : T(1));
      p.bn_beta = Tensor<T>::zeros({spec.channels});
      p.bn_mean = Tensor<T>::zeros({spec.channels});
      p.bn_var = Tensor<T>::full({spec.channels}, T(1));
    } else {
      Tensor<T> w(spec.weights);
      // Zero attention scores start as uniform weights over time.
      if (!zeros && spec.name != "attention_dense") {
        const std::size_t fan_in = shape_size(spec.weights) / spec.weights[0];
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
        SplitMix64 rng(derive_seed(init.seed, spec.name));
        for (auto& v : w.values()) v = static_cast<T>(scale * rng.normal());
      }
      p.weights = std::move(w);
      if (spec.bias) p.bias = Tensor<T>::zeros({spec.weights[0]});
    }
    model.params.push_back(std::move(p));
  }
  validate_model(model);
  return model;
}

template <typename T>
void validate_model(const Model<T>& model) {
  const auto specs = layer_specs(model.config);
  if (model.tags.size() != model.config.n_tags) {
    throw Error(ErrorCode::ConfigInvalid, "vocabulary has " + std::to_string(model.tags.size()) + " tags, config has " +
                                              std::to_string(model.config.n_tags));
  }
  if (std::set<std::string>(model.tags.begin(), model.tags.end()).size() != model.tags.size()) {
    throw Error(ErrorCode::ConfigInvalid, "tag vocabulary entries must be unique");
  }
  if (model.params.size() != specs.size()) {
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(specs.size()) + " layers, model has " +
                                              std::to_string(model.params.size()));
  }
  auto expect = [](const std::optional<Tensor<T>>& t, const Shape& shape, const std::string& what) {
    if (!t) throw Error(ErrorCode::ShapeMismatch, what + " is missing");
    if (t->shape() != shape) {
      throw Error(ErrorCode::ShapeMismatch, what + " has shape " + shape_string(t->shape()) + ", expected " +
                                                shape_string(shape));
    }
  };
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    const auto& p = model.params[i];
    if (p.name != spec.name) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(i) + " is '" + p.name + "', expected '" +
                                                spec.name + "'");
    }
    if (spec.kind == LayerKind::BatchNorm) {
      const Shape ch{spec.channels};
      expect(p.bn_gamma, ch, spec.name + ".gamma");
      expect(p.bn_beta, ch, spec.name + ".beta");
      expect(p.bn_mean, ch, spec.name + ".running_mean");
      expect(p.bn_var, ch, spec.name + ".running_var");
      for (T v : p.bn_var->values()) {
        if (!(v >= T(0))) throw Error(ErrorCode::ConfigInvalid, spec.name + ".running_var has a negative entry");
      }
    } else {
      expect(p.weights, spec.weights, spec.name + ".weights");
      if (spec.bias) expect(p.bias, {spec.weights[0]}, spec.name + ".bias");
      if (!spec.bias && p.bias) throw Error(ErrorCode::ShapeMismatch, spec.name + " must not carry a bias");
    }
  }
}

template <typename T>
const Tensor<T>& ForwardTrace<T>::at(std::string_view key) const {
  auto it = features.find(std::string(key));
  if (it == features.end()) throw Error(ErrorCode::UnknownFeatureKey, "trace has no feature '" + std::string(key) + "'");
  return it->second;
}

template <typename T>
std::vector<std::string> ForwardTrace<T>::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : features) out.push_back(k);
  return out;
}

std::vector<std::string> trace_keys(const ModelConfig& config) {
  std::vector<std::string> keys;
  if (config.family == Family::Vgg) {
    keys = {"pool1", "pool2", "pool3", "pool4", "pool5", "output"};
  } else if (config.backend == Backend::TemporalPooling) {
    keys = {"timbral", "temporal", "cnn1", "cnn2", "cnn3", "mean_pool", "max_pool", "penultimate", "output"};
  } else {
    keys = {"timbral", "temporal", "cnn1", "cnn2", "cnn3", "attention_weights", "context", "penultimate", "output"};
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

// ---- forward / backward engine -----------------------------------------------------

template <typename T>
using Batch = std::vector<Tensor<T>>;

namespace {

template <typename T>
struct BnCache {
  BnMode mode = BnMode::Inference;
  Batch<T> inputs;  // inference-mode backward needs the raw input
  std::optional<BatchNormTrainResult<T>> train;
};

// linear (conv or dense) -> batch-norm -> relu
struct Unit {
  std::size_t linear = 0;
  std::size_t bn = 0;
  bool conv = true;
  Padding pad;
};

template <typename T>
struct UnitCache {
  Batch<T> inputs;
  BnCache<T> bn;
  Batch<T> pre_relu;
  Batch<T> outputs;
};

struct MusicnnLayout {
  std::size_t input_bn = 0;
  std::vector<Unit> timbral, temporal;
  std::array<Unit, 3> mid;
  std::size_t attention = 0;
  Unit penultimate;
  std::size_t output = 0;
};

struct VggLayout {
  std::array<Unit, 5> blocks;
  std::size_t output = 0;
};

template <typename T>
struct Ctx {
  const Model<T>& model;
  BnMode mode;
  std::vector<std::pair<std::size_t, BatchStats<T>>>* stats;
};

template <typename T>
MusicnnLayout musicnn_layout(const Model<T>& m) {
  const ModelConfig& c = m.config;
  MusicnnLayout l;
  l.input_bn = m.index_of("input_bn");
  for (std::size_t i = 0; i < c.timbral_filter_heights.size(); ++i) {
    l.timbral.push_back({m.index_of(indexed("timbral", i, "_conv")), m.index_of(indexed("timbral", i, "_bn")), true, {3, 0}});
  }
  for (std::size_t j = 0; j < c.temporal_filter_lengths.size(); ++j) {
    l.temporal.push_back({m.index_of(indexed("temporal", j, "_conv")), m.index_of(indexed("temporal", j, "_bn")), true,
                          {(c.temporal_filter_lengths[j] - 1) / 2, 0}});
  }
  for (std::size_t k = 0; k < 3; ++k) {
    l.mid[k] = {m.index_of(indexed("cnn", k + 1, "_conv")), m.index_of(indexed("cnn", k + 1, "_bn")), true,
                {(c.midend_kernel - 1) / 2, 0}};
  }
  if (c.backend == Backend::Attention) l.attention = m.index_of("attention_dense");
  l.penultimate = {m.index_of("penultimate_dense"), m.index_of("penultimate_bn"), false, {}};
  l.output = m.index_of("output_dense");
  return l;
}

template <typename T>
VggLayout vgg_layout(const Model<T>& m) {
  VggLayout l;
  for (std::size_t b = 0; b < 5; ++b) {
    l.blocks[b] = {m.index_of(indexed("block", b + 1, "_conv")), m.index_of(indexed("block", b + 1, "_bn")), true, {1, 1}};
  }
  l.output = m.index_of("output_dense");
  return l;
}

template <typename T>
void add_into(std::optional<Tensor<T>>& dst, const Tensor<T>& src) {
  if (!dst) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <typename T>
Batch<T> bn_forward(const Ctx<T>& ctx, std::size_t layer, Batch<T> x, BnCache<T>& cache) {
  const auto& p = ctx.model.params[layer];
  const T eps = static_cast<T>(kBatchNormEpsilon);
  cache.mode = ctx.mode;
  if (ctx.mode == BnMode::Training) {
    cache.train = batchnorm_train<T>(x, p, eps);
    if (ctx.stats) ctx.stats->emplace_back(layer, cache.train->stats);
    return cache.train->outputs;
  }
  Batch<T> y;
  y.reserve(x.size());
  for (const auto& xi : x) y.push_back(batchnorm_infer(xi, p, eps));
  cache.inputs = std::move(x);
  return y;
}

template <typename T>
Batch<T> bn_backward(const Model<T>& m, std::size_t layer, const BnCache<T>& cache, const Batch<T>& grad,
                     Gradients<T>& g) {
  const auto& p = m.params[layer];
  if (cache.mode == BnMode::Training) {
    auto r = batchnorm_train_backward<T>(*cache.train, p, grad);
    add_into(g[layer].bn_gamma, r.gamma);
    add_into(g[layer].bn_beta, r.beta);
    return std::move(r.inputs);
  }
  Batch<T> gx;
  for (std::size_t b = 0; b < grad.size(); ++b) {
    auto r = batchnorm_infer_backward(cache.inputs[b], p, static_cast<T>(kBatchNormEpsilon), grad[b]);
    add_into(g[layer].bn_gamma, r.gamma);
    add_into(g[layer].bn_beta, r.beta);
    gx.push_back(std::move(r.inputs[0]));
  }
  return gx;
}

template <typename T>
const Batch<T>& unit_forward(const Ctx<T>& ctx, const Unit& u, Batch<T> input, UnitCache<T>& c) {
  const auto& lin = ctx.model.params[u.linear];
  Batch<T> z;
  z.reserve(input.size());
  for (const auto& x : input) z.push_back(u.conv ? conv2d(x, lin, u.pad) : dense(x, lin));
  c.inputs = std::move(input);
  c.pre_relu = bn_forward(ctx, u.bn, std::move(z), c.bn);
  c.outputs.clear();
  for (const auto& v : c.pre_relu) c.outputs.push_back(relu(v));
  return c.outputs;
}

template <typename T>
Batch<T> unit_backward(const Model<T>& m, const Unit& u, const UnitCache<T>& c, const Batch<T>& grad_out,
                       Gradients<T>& g) {
  Batch<T> gz;
  gz.reserve(grad_out.size());
  for (std::size_t b = 0; b < grad_out.size(); ++b) gz.push_back(relu_backward(c.pre_relu[b], grad_out[b]));
  const Batch<T> gbn = bn_backward(m, u.bn, c.bn, gz, g);
  const auto& lin = m.params[u.linear];
  Batch<T> gx;
  gx.reserve(gbn.size());
  for (std::size_t b = 0; b < gbn.size(); ++b) {
    if (u.conv) {
      auto r = conv2d_backward(c.inputs[b], lin, u.pad, gbn[b]);
      add_into(g[u.linear].weights, r.weights);
      if (r.bias) add_into(g[u.linear].bias, *r.bias);
      gx.push_back(std::move(r.input));
    } else {
      auto r = dense_backward(c.inputs[b], lin, gbn[b]);
      add_into(g[u.linear].weights, r.weights);
      if (r.bias) add_into(g[u.linear].bias, *r.bias);
      gx.push_back(std::move(r.input));
    }
  }
  return gx;
}

template <typename T>
Tensor<T> as_column_image(const Tensor<T>& t) {  // [C, T] -> [C, T, 1]
  return t.reshaped({t.extent(0), t.extent(1), 1});
}

template <typename T>
Tensor<T> as_sequence(const Tensor<T>& t) {  // [C, T, 1] -> [C, T]
  return t.reshaped({t.extent(0), t.extent(1)});
}

template <typename T>
Tensor<T> normalize_patch(const Tensor<T>& patch, const ModelConfig& c) {
  const std::size_t frames = c.dsp.patch_frames, bands = c.dsp.n_mels;
  if (patch.shape() == Shape{frames, bands}) return patch.reshaped({1, frames, bands});
  if (patch.shape() == Shape{1, frames, bands}) return patch;
  throw Error(ErrorCode::ShapeMismatch, "patch " + shape_string(patch.shape()) + " does not match [1, " +
                                            std::to_string(frames) + ", " + std::to_string(bands) + "]");
}

}  // namespace

template <typename T>
struct PassCache {
  Family family = Family::Musicnn;
  Backend backend = Backend::TemporalPooling;

  // musicnn
  BnCache<T> input_bn;
  Batch<T> normalized;  // [1, T, M]
  std::vector<UnitCache<T>> timbral;
  std::vector<UnitCache<T>> temporal;
  Batch<T> timbral_maps, temporal_maps, front;  // [C, T]
  std::array<UnitCache<T>, 3> mid;
  std::array<Batch<T>, 3> cnn;
  Batch<T> stack;
  Batch<T> mean_pool, max_pool;
  Batch<T> attention, context;
  UnitCache<T> penultimate;

  // vgg
  std::array<UnitCache<T>, 5> blocks;
  std::array<Batch<T>, 5> pooled;

  // head
  Batch<T> head_inputs;
  Batch<T> logits;
  Batch<T> outputs;
};

namespace {

template <typename T>
void head_forward(const Ctx<T>& ctx, std::size_t output_layer, Batch<T> inputs, PassCache<T>& c) {
  const auto& p = ctx.model.params[output_layer];
  c.logits.clear();
  c.outputs.clear();
  for (const auto& x : inputs) {
    c.logits.push_back(dense(x, p));
    c.outputs.push_back(sigmoid(c.logits.back()));
  }
  c.head_inputs = std::move(inputs);
}

template <typename T>
Batch<T> head_backward(const Model<T>& m, std::size_t output_layer, const PassCache<T>& c,
                       std::span<const Tensor<T>> grad_logits, Gradients<T>& g) {
  Batch<T> gx;
  for (std::size_t b = 0; b < grad_logits.size(); ++b) {
    auto r = dense_backward(c.head_inputs[b], m.params[output_layer], grad_logits[b]);
    add_into(g[output_layer].weights, r.weights);
    add_into(g[output_layer].bias, *r.bias);
    gx.push_back(std::move(r.input));
  }
  return gx;
}

template <typename T>
void frontend_stage(const Ctx<T>& ctx, const MusicnnLayout& l, Batch<T> patches, PassCache<T>& c) {
  const std::size_t n = patches.size();
  c.normalized = bn_forward(ctx, l.input_bn, std::move(patches), c.input_bn);

  c.timbral.assign(l.timbral.size(), {});
  std::vector<Batch<T>> timbral_parts(n);
  for (std::size_t i = 0; i < l.timbral.size(); ++i) {
    const Batch<T>& out = unit_forward(ctx, l.timbral[i], c.normalized, c.timbral[i]);
    for (std::size_t b = 0; b < n; ++b) timbral_parts[b].push_back(pool_max_over_axis(out[b], 2));
  }

  Batch<T> envelope;
  for (const auto& x : c.normalized) {
    envelope.push_back(pool_mean_over_axis(x, 2).reshaped({1, x.extent(1), 1}));
  }
  c.temporal.assign(l.temporal.size(), {});
  std::vector<Batch<T>> temporal_parts(n);
  for (std::size_t j = 0; j < l.temporal.size(); ++j) {
    const Batch<T>& out = unit_forward(ctx, l.temporal[j], envelope, c.temporal[j]);
    for (std::size_t b = 0; b < n; ++b) temporal_parts[b].push_back(as_sequence(out[b]));
  }

  c.timbral_maps.clear();
  c.temporal_maps.clear();
  c.front.clear();
  for (std::size_t b = 0; b < n; ++b) {
    c.timbral_maps.push_back(concat<T>(timbral_parts[b], 0));
    c.temporal_maps.push_back(concat<T>(temporal_parts[b], 0));
    const std::array<Tensor<T>, 2> both{c.timbral_maps[b], c.temporal_maps[b]};
    c.front.push_back(concat<T>(both, 0));
  }
}

template <typename T>
void midend_stage(const Ctx<T>& ctx, const MusicnnLayout& l, const Batch<T>& front, PassCache<T>& c) {
  const Batch<T>* previous = &front;
  for (std::size_t k = 0; k < 3; ++k) {
    Batch<T> in;
    for (const auto& x : *previous) in.push_back(as_column_image(x));
    const Batch<T>& out = unit_forward(ctx, l.mid[k], std::move(in), c.mid[k]);
    c.cnn[k].clear();
    for (std::size_t b = 0; b < out.size(); ++b) {
      Tensor<T> y = as_sequence(out[b]);
      if (k > 0) add_into(y, (*previous)[b]);  // residual
      c.cnn[k].push_back(std::move(y));
    }
    previous = &c.cnn[k];
  }
}

template <typename T>
void pooling_stage(const Ctx<T>& ctx, const MusicnnLayout& l, const Batch<T>& stack, PassCache<T>& c) {
  c.mean_pool.clear();
  c.max_pool.clear();
  Batch<T> pooled;
  for (const auto& s : stack) {
    c.mean_pool.push_back(pool_mean_over_axis(s, 1));
    c.max_pool.push_back(pool_max_over_axis(s, 1));
    const std::array<Tensor<T>, 2> both{c.mean_pool.back(), c.max_pool.back()};
    pooled.push_back(concat<T>(both, 0));
  }
  const Batch<T>& pen = unit_forward(ctx, l.penultimate, std::move(pooled), c.penultimate);
  head_forward(ctx, l.output, pen, c);
}

template <typename T>
void attention_stage(const Ctx<T>& ctx, const MusicnnLayout& l, const Batch<T>& stack, PassCache<T>& c) {
  const auto& a = *ctx.model.params[l.attention].weights;  // [1, C]
  c.attention.clear();
  c.context.clear();
  for (const auto& s : stack) {
    const std::size_t channels = s.extent(0), frames = s.extent(1);
    Tensor<T> scores({frames});
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t t = 0; t < frames; ++t) scores[t] += a[ch] * s.at(ch, t);
    Tensor<T> weights = softmax_over_axis(scores, 0);
    Tensor<T> context({channels});
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t t = 0; t < frames; ++t) context[ch] += weights[t] * s.at(ch, t);
    check_finite(context, "attention context");
    c.attention.push_back(std::move(weights));
    c.context.push_back(std::move(context));
  }
  const Batch<T>& pen = unit_forward(ctx, l.penultimate, c.context, c.penultimate);
  head_forward(ctx, l.output, pen, c);
}

template <typename T>
void check_stack(const Tensor<T>& stack, const ModelConfig& config) {
  if (stack.shape() != Shape{config.stack_channels(), config.dsp.patch_frames}) {
    throw Error(ErrorCode::ShapeMismatch, "back-end input " + shape_string(stack.shape()) + " does not match [" +
                                              std::to_string(config.stack_channels()) + ", " +
                                              std::to_string(config.dsp.patch_frames) + "]");
  }
}

template <typename T>
void require_family(const Model<T>& m, Family family, std::string_view op) {
  if (m.config.family != family) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + " needs a " + std::string(to_string(family)) + " model");
  }
}

template <typename T>
void musicnn_pass(const Ctx<T>& ctx, Batch<T> patches, PassCache<T>& c) {
  const MusicnnLayout l = musicnn_layout(ctx.model);
  frontend_stage(ctx, l, std::move(patches), c);
  midend_stage(ctx, l, c.front, c);
  c.stack.clear();
  for (std::size_t b = 0; b < c.front.size(); ++b) {
    const std::array<Tensor<T>, 4> parts{c.front[b], c.cnn[0][b], c.cnn[1][b], c.cnn[2][b]};
    c.stack.push_back(concat<T>(parts, 0));
  }
  if (ctx.model.config.backend == Backend::Attention) {
    attention_stage(ctx, l, c.stack, c);
  } else {
    pooling_stage(ctx, l, c.stack, c);
  }
}

template <typename T>
void vgg_pass(const Ctx<T>& ctx, Batch<T> patches, PassCache<T>& c) {
  const ModelConfig& cfg = ctx.model.config;
  const VggLayout l = vgg_layout(ctx.model);
  const std::size_t padded = cfg.vgg_input_frames();
  Batch<T> x;
  for (const auto& p : patches) {
    Tensor<T> q({1, padded, cfg.dsp.n_mels});
    std::copy(p.values().begin(), p.values().end(), q.values().begin());  // zero rows appended in time
    x.push_back(std::move(q));
  }
  for (std::size_t b = 0; b < 5; ++b) {
    const Batch<T>& out = unit_forward(ctx, l.blocks[b], std::move(x), c.blocks[b]);
    c.pooled[b].clear();
    for (const auto& y : out) c.pooled[b].push_back(pool_max(y, cfg.vgg_pool_shapes[b].h, cfg.vgg_pool_shapes[b].w));
    x = c.pooled[b];
  }
  Batch<T> flat;
  for (const auto& p : c.pooled[4]) flat.push_back(p.reshaped({p.size()}));
  head_forward(ctx, l.output, std::move(flat), c);
}

template <typename T>
ForwardTrace<T> trace_of(const PassCache<T>& c, std::size_t b) {
  ForwardTrace<T> t;
  auto& f = t.features;
  if (c.family == Family::Vgg) {
    for (std::size_t i = 0; i < 5; ++i) f.emplace("pool" + std::to_string(i + 1), c.pooled[i][b]);
  } else {
    f.emplace("timbral", c.timbral_maps[b]);
    f.emplace("temporal", c.temporal_maps[b]);
    f.emplace("cnn1", c.cnn[0][b]);
    f.emplace("cnn2", c.cnn[1][b]);
    f.emplace("cnn3", c.cnn[2][b]);
    if (c.backend == Backend::Attention) {
      f.emplace("attention_weights", c.attention[b]);
      f.emplace("context", c.context[b]);
    } else {
      f.emplace("mean_pool", c.mean_pool[b]);
      f.emplace("max_pool", c.max_pool[b]);
    }
    f.emplace("penultimate", c.penultimate.outputs[b]);
  }
  f.emplace("output", c.outputs[b]);
  return t;
}

template <typename T>
Gradients<T> zero_gradients(const Model<T>& m) {
  Gradients<T> g;
  for (const auto& p : m.params) {
    LayerParams<T> z;
    z.name = p.name;
    if (p.weights) z.weights = Tensor<T>(p.weights->shape());
    if (p.bias) z.bias = Tensor<T>(p.bias->shape());
    if (p.bn_gamma) z.bn_gamma = Tensor<T>(p.bn_gamma->shape());
    if (p.bn_beta) z.bn_beta = Tensor<T>(p.bn_beta->shape());
    g.push_back(std::move(z));
  }
  return g;
}

template <typename T>
void musicnn_backward(const Model<T>& m, const PassCache<T>& c, std::span<const Tensor<T>> grad_logits,
                      Gradients<T>& g) {
  const ModelConfig& cfg = m.config;
  const MusicnnLayout l = musicnn_layout(m);
  const std::size_t n = grad_logits.size();
  const std::size_t stack_channels = cfg.stack_channels();

  const Batch<T> g_pen = head_backward(m, l.output, c, grad_logits, g);
  const Batch<T> g_pen_in = unit_backward(m, l.penultimate, c.penultimate, g_pen, g);

  Batch<T> g_stack;
  if (cfg.backend == Backend::Attention) {
    const auto& a = *m.params[l.attention].weights;
    auto& ga = *g[l.attention].weights;
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor<T>& s = c.stack[b];
      const Tensor<T>& w = c.attention[b];
      const Tensor<T>& g_ctx = g_pen_in[b];
      const std::size_t frames = s.extent(1);
      Tensor<T> gs(s.shape());
      Tensor<T> g_w({frames});
      for (std::size_t ch = 0; ch < stack_channels; ++ch) {
        for (std::size_t t = 0; t < frames; ++t) {
          gs.at(ch, t) = g_ctx[ch] * w[t];
          g_w[t] += g_ctx[ch] * s.at(ch, t);
        }
      }
      const Tensor<T> g_scores = softmax_backward(w, g_w, 0);
      for (std::size_t ch = 0; ch < stack_channels; ++ch) {
        for (std::size_t t = 0; t < frames; ++t) {
          ga[ch] += g_scores[t] * s.at(ch, t);
          gs.at(ch, t) += a[ch] * g_scores[t];
        }
      }
      g_stack.push_back(std::move(gs));
    }
  } else {
    for (std::size_t b = 0; b < n; ++b) {
      const std::array<std::size_t, 2> halves{stack_channels, stack_channels};
      const auto parts = split(g_pen_in[b], halves, 0);
      Tensor<T> gs = pool_mean_over_axis_backward(c.stack[b].shape(), 1, parts[0]);
      add_into(gs, pool_max_over_axis_backward(c.stack[b], 1, parts[1]));
      g_stack.push_back(std::move(gs));
    }
  }

  const std::size_t front_channels = cfg.frontend_channels();
  const std::array<std::size_t, 4> stack_parts{front_channels, cfg.midend_channels, cfg.midend_channels,
                                               cfg.midend_channels};
  Batch<T> g_front;
  std::array<Batch<T>, 3> g_cnn;
  for (std::size_t b = 0; b < n; ++b) {
    auto parts = split(g_stack[b], stack_parts, 0);
    g_front.push_back(std::move(parts[0]));
    for (std::size_t k = 0; k < 3; ++k) g_cnn[k].push_back(std::move(parts[k + 1]));
  }

  // cnn_k = relu(bn(conv(cnn_{k-1}))) + cnn_{k-1} for k > 1
  for (std::size_t k = 3; k-- > 0;) {
    Batch<T> g_unit;
    for (const auto& gk : g_cnn[k]) g_unit.push_back(as_column_image(gk));
    const Batch<T> g_in = unit_backward(m, l.mid[k], c.mid[k], g_unit, g);
    Batch<T>& g_prev = k == 0 ? g_front : g_cnn[k - 1];
    for (std::size_t b = 0; b < n; ++b) {
      add_into(g_prev[b], as_sequence(g_in[b]));
      if (k > 0) add_into(g_prev[b], g_cnn[k][b]);
    }
  }

  const std::size_t timbral_total = cfg.timbral_filter_heights.size() * cfg.timbral_channels;
  const std::size_t temporal_total = cfg.temporal_filter_lengths.size() * cfg.temporal_channels;
  const std::array<std::size_t, 2> front_parts{timbral_total, temporal_total};
  Batch<T> g_timbral, g_temporal;
  for (std::size_t b = 0; b < n; ++b) {
    auto parts = split(g_front[b], front_parts, 0);
    g_timbral.push_back(std::move(parts[0]));
    g_temporal.push_back(std::move(parts[1]));
  }

  Batch<T> g_normalized;
  for (const auto& x : c.normalized) g_normalized.push_back(Tensor<T>(x.shape()));

  const std::vector<std::size_t> timbral_split(cfg.timbral_filter_heights.size(), cfg.timbral_channels);
  std::vector<Batch<T>> g_timbral_branch(timbral_split.size());
  for (std::size_t b = 0; b < n; ++b) {
    auto parts = split(g_timbral[b], timbral_split, 0);
    for (std::size_t i = 0; i < parts.size(); ++i) g_timbral_branch[i].push_back(std::move(parts[i]));
  }
  for (std::size_t i = 0; i < l.timbral.size(); ++i) {
    Batch<T> g_out;
    for (std::size_t b = 0; b < n; ++b) {
      g_out.push_back(pool_max_over_axis_backward(c.timbral[i].outputs[b], 2, g_timbral_branch[i][b]));
    }
    const Batch<T> g_in = unit_backward(m, l.timbral[i], c.timbral[i], g_out, g);
    for (std::size_t b = 0; b < n; ++b) add_into(g_normalized[b], g_in[b]);
  }

  const std::vector<std::size_t> temporal_split(cfg.temporal_filter_lengths.size(), cfg.temporal_channels);
  std::vector<Batch<T>> g_temporal_branch(temporal_split.size());
  for (std::size_t b = 0; b < n; ++b) {
    auto parts = split(g_temporal[b], temporal_split, 0);
    for (std::size_t j = 0; j < parts.size(); ++j) g_temporal_branch[j].push_back(as_column_image(parts[j]));
  }
  Batch<T> g_envelope;
  for (std::size_t j = 0; j < l.temporal.size(); ++j) {
    const Batch<T> g_in = unit_backward(m, l.temporal[j], c.temporal[j], g_temporal_branch[j], g);
    for (std::size_t b = 0; b < n; ++b) {
      if (j == 0) {
        g_envelope.push_back(g_in[b]);
      } else {
        add_into(g_envelope[b], g_in[b]);
      }
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    const Tensor<T> env = g_envelope[b].reshaped({1, g_envelope[b].extent(1)});
    add_into(g_normalized[b], pool_mean_over_axis_backward(c.normalized[b].shape(), 2, env));
  }

  bn_backward(m, l.input_bn, c.input_bn, g_normalized, g);
}

template <typename T>
void vgg_backward(const Model<T>& m, const PassCache<T>& c, std::span<const Tensor<T>> grad_logits, Gradients<T>& g) {
  const ModelConfig& cfg = m.config;
  const VggLayout l = vgg_layout(m);
  Batch<T> grad = head_backward(m, l.output, c, grad_logits, g);
  for (std::size_t b = 0; b < grad.size(); ++b) grad[b] = std::move(grad[b]).reshaped(c.pooled[4][b].shape());
  for (std::size_t k = 5; k-- > 0;) {
    Batch<T> g_out;
    for (std::size_t b = 0; b < grad.size(); ++b) {
      g_out.push_back(pool_max_backward(c.blocks[k].outputs[b], cfg.vgg_pool_shapes[k].h, cfg.vgg_pool_shapes[k].w,
                                        grad[b]));
    }
    grad = unit_backward(m, l.blocks[k], c.blocks[k], g_out, g);
  }
}

template <typename T>
PassCache<T> single_pass(const Model<T>& model, Tensor<T> patch) {
  PassCache<T> cache;
  cache.family = model.config.family;
  cache.backend = model.config.backend;
  const Ctx<T> ctx{model, BnMode::Inference, nullptr};
  Batch<T> batch;
  batch.push_back(std::move(patch));
  if (model.config.family == Family::Vgg) {
    vgg_pass(ctx, std::move(batch), cache);
  } else {
    musicnn_pass(ctx, std::move(batch), cache);
  }
  return cache;
}

}  // namespace

// ---- public entry points ------------------------------------------------------------

template <typename T>
FrontendOutput<T> musicnn_frontend(const Tensor<T>& patch, const Model<T>& model) {
  require_family(model, Family::Musicnn, "musicnn_frontend");
  PassCache<T> c;
  const Ctx<T> ctx{model, BnMode::Inference, nullptr};
  frontend_stage(ctx, musicnn_layout(model), Batch<T>{normalize_patch(patch, model.config)}, c);
  return {std::move(c.timbral_maps[0]), std::move(c.temporal_maps[0]), std::move(c.front[0])};
}

template <typename T>
MidendOutput<T> musicnn_midend(const Tensor<T>& concat, const Model<T>& model) {
  require_family(model, Family::Musicnn, "musicnn_midend");
  const ModelConfig& cfg = model.config;
  if (concat.shape() != Shape{cfg.frontend_channels(), cfg.dsp.patch_frames}) {
    throw Error(ErrorCode::ShapeMismatch, "mid-end input " + shape_string(concat.shape()) + " does not match [" +
                                              std::to_string(cfg.frontend_channels()) + ", " +
                                              std::to_string(cfg.dsp.patch_frames) + "]");
  }
  PassCache<T> c;
  const Ctx<T> ctx{model, BnMode::Inference, nullptr};
  midend_stage(ctx, musicnn_layout(model), Batch<T>{concat}, c);
  return {std::move(c.cnn[0][0]), std::move(c.cnn[1][0]), std::move(c.cnn[2][0])};
}

template <typename T>
PoolingOutput<T> backend_pooling(const Tensor<T>& stack, const Model<T>& model) {
  require_family(model, Family::Musicnn, "backend_pooling");
  if (model.config.backend != Backend::TemporalPooling) {
    throw Error(ErrorCode::ShapeMismatch, "backend_pooling needs a temporal-pooling model");
  }
  check_stack(stack, model.config);
  PassCache<T> c;
  const Ctx<T> ctx{model, BnMode::Inference, nullptr};
  pooling_stage(ctx, musicnn_layout(model), Batch<T>{stack}, c);
  return {std::move(c.mean_pool[0]), std::move(c.max_pool[0]), std::move(c.penultimate.outputs[0]),
          std::move(c.outputs[0])};
}

template <typename T>
AttentionOutput<T> backend_attention(const Tensor<T>& stack, const Model<T>& model) {
  require_family(model, Family::Musicnn, "backend_attention");
  if (model.config.backend != Backend::Attention) {
    throw Error(ErrorCode::ShapeMismatch, "backend_attention needs an attention model");
  }
  check_stack(stack, model.config);
  PassCache<T> c;
  const Ctx<T> ctx{model, BnMode::Inference, nullptr};
  attention_stage(ctx, musicnn_layout(model), Batch<T>{stack}, c);
  return {std::move(c.attention[0]), std::move(c.context[0]), std::move(c.penultimate.outputs[0]),
          std::move(c.outputs[0])};
}

template <typename T>
ForwardTrace<T> vgg_forward(const Tensor<T>& patch, const Model<T>& model) {
  require_family(model, Family::Vgg, "vgg_forward");
  return trace_of(single_pass(model, normalize_patch(patch, model.config)), 0);
}

template <typename T>
ForwardTrace<T> forward(const Tensor<T>& patch, const Model<T>& model) {
  return trace_of(single_pass(model, normalize_patch(patch, model.config)), 0);
}

template <typename T>
BatchPass<T> forward_batch(const Model<T>& model, std::span<const Tensor<T>> patches, BnMode mode) {
  if (patches.empty()) throw Error(ErrorCode::InvalidArgument, "forward_batch: empty batch");
  Batch<T> batch;
  for (const auto& p : patches) batch.push_back(normalize_patch(p, model.config));

  BatchPass<T> pass;
  pass.mode = mode;
  auto cache = std::make_shared<PassCache<T>>();
  cache->family = model.config.family;
  cache->backend = model.config.backend;
  const Ctx<T> ctx{model, mode, &pass.bn_stats};
  if (model.config.family == Family::Vgg) {
    vgg_pass(ctx, std::move(batch), *cache);
  } else {
    musicnn_pass(ctx, std::move(batch), *cache);
  }
  for (std::size_t b = 0; b < patches.size(); ++b) pass.traces.push_back(trace_of(*cache, b));
  pass.logits = cache->logits;
  pass.cache = std::move(cache);
  return pass;
}

template <typename T>
Gradients<T> backward_batch(const Model<T>& model, const BatchPass<T>& pass, std::span<const Tensor<T>> grad_logits) {
  if (!pass.cache || grad_logits.size() != pass.logits.size()) {
    throw Error(ErrorCode::ShapeMismatch, "backward_batch: gradient count does not match the forward batch");
  }
  for (std::size_t b = 0; b < grad_logits.size(); ++b) {
    if (grad_logits[b].shape() != pass.logits[b].shape()) {
      throw Error(ErrorCode::ShapeMismatch, "backward_batch: logit gradient shape mismatch");
    }
  }
  Gradients<T> g = zero_gradients(model);
  if (model.config.family == Family::Vgg) {
    vgg_backward(model, *pass.cache, grad_logits, g);
  } else {
    musicnn_backward(model, *pass.cache, grad_logits, g);
  }
  return g;
}

template <typename T>
void update_running_stats(Model<T>& model, const BatchPass<T>& pass, double momentum) {
  const T keep = static_cast<T>(momentum);
  for (const auto& [layer, stats] : pass.bn_stats) {
    auto& p = model.params[layer];
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
      (*p.bn_mean)[c] = keep * (*p.bn_mean)[c] + (T(1) - keep) * stats.mean[c];
      (*p.bn_var)[c] = keep * (*p.bn_var)[c] + (T(1) - keep) * stats.var[c];
    }
  }
}

template <typename T>
void calibrate_batchnorm(Model<T>& model, std::span<const Tensor<T>> patches) {
  const BatchPass<T> pass = forward_batch(model, patches, BnMode::Training);
  update_running_stats(model, pass, 0.0);
}

#define MUSICNN_INSTANTIATE_ARCH(T)                                                                           \
  template struct Model<T>;                                                                                   \
  template struct ForwardTrace<T>;                                                                            \
  template Model<T> build_model<T>(const ModelConfig&, Init, std::vector<std::string>);                       \
  template void validate_model<T>(const Model<T>&);                                                           \
  template FrontendOutput<T> musicnn_frontend<T>(const Tensor<T>&, const Model<T>&);                          \
  template MidendOutput<T> musicnn_midend<T>(const Tensor<T>&, const Model<T>&);                              \
  template PoolingOutput<T> backend_pooling<T>(const Tensor<T>&, const Model<T>&);                            \
  template AttentionOutput<T> backend_attention<T>(const Tensor<T>&, const Model<T>&);                        \
  template ForwardTrace<T> vgg_forward<T>(const Tensor<T>&, const Model<T>&);                                 \
  template ForwardTrace<T> forward<T>(const Tensor<T>&, const Model<T>&);                                     \
  template BatchPass<T> forward_batch<T>(const Model<T>&, std::span<const Tensor<T>>, BnMode);                \
  template Gradients<T> backward_batch<T>(const Model<T>&, const BatchPass<T>&, std::span<const Tensor<T>>); \
  template void update_running_stats<T>(Model<T>&, const BatchPass<T>&, double);                              \
  template void calibrate_batchnorm<T>(Model<T>&, std::span<const Tensor<T>>);

MUSICNN_INSTANTIATE_ARCH(float)
MUSICNN_INSTANTIATE_ARCH(double)

#undef MUSICNN_INSTANTIATE_ARCH

}  // namespace musicnn
