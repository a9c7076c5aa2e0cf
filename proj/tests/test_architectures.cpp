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
#include <numeric>

#include "support.hpp"

using namespace musicnn;
using testing::random_tensor;

namespace {

// Seeded weights plus non-trivial batch-norm parameters and running stats.
Model<double> random_model(const ModelConfig& c, std::uint64_t seed) {
  Model<double> m = build_model<double>(c, Init::seeded(seed));
  SplitMix64 rng(seed + 99);
  for (auto& p : m.params) {
    if (p.is_batchnorm()) {
      p.bn_gamma = random_tensor<double>(p.bn_gamma->shape(), rng, 0.5, 1.5);
      p.bn_beta = random_tensor<double>(p.bn_beta->shape(), rng, -0.2, 0.2);
      p.bn_mean = random_tensor<double>(p.bn_mean->shape(), rng, -0.3, 0.3);
      p.bn_var = random_tensor<double>(p.bn_var->shape(), rng, 0.5, 2.0);
    } else if (p.name == "attention_dense") {
      p.weights = random_tensor<double>(p.weights->shape(), rng, -0.5, 0.5);
    }
    if (p.bias) p.bias = random_tensor<double>(p.bias->shape(), rng, -0.1, 0.1);
  }
  return m;
}

Tensor<double> bn(const Tensor<double>& x, const Model<double>& m, const std::string& name) {
  return batchnorm_infer(x, m.layer(name), kBatchNormEpsilon);
}

// relu(bn(conv(x))) for the "<stem>_conv" / "<stem>_bn" pair.
Tensor<double> unit(const Tensor<double>& x, const Model<double>& m, const std::string& stem, Padding pad) {
  return relu(bn(conv2d(x, m.layer(stem + "_conv"), pad), m, stem + "_bn"));
}

Tensor<double> to_rows(const Tensor<double>& x) { return x.reshaped({x.extent(0), x.extent(1)}); }

Tensor<double> add(const Tensor<double>& a, const Tensor<double>& b) {
  Tensor<double> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor<double> column(const Tensor<double>& x, std::size_t t) {
  Tensor<double> out({x.extent(0)});
  for (std::size_t c = 0; c < x.extent(0); ++c) out[c] = x.at(c, t);
  return out;
}

// Composition of tensor ops following the documented musicnn graph.
std::map<std::string, Tensor<double>> musicnn_oracle(const Tensor<double>& patch, const Model<double>& m) {
  const ModelConfig& c = m.config;
  const std::size_t T = c.dsp.patch_frames, M = c.dsp.n_mels;
  std::map<std::string, Tensor<double>> f;
  const auto x = bn(patch.reshaped({1, T, M}), m, "input_bn");

  std::vector<Tensor<double>> tim;
  for (std::size_t i = 0; i < c.timbral_filter_heights.size(); ++i) {
    tim.push_back(pool_max_over_axis(unit(x, m, "timbral" + std::to_string(i), {3, 0}), 2));
  }
  f["timbral"] = concat<double>(tim, 0);

  const auto env = pool_mean_over_axis(x, 2).reshaped({1, T, 1});
  std::vector<Tensor<double>> tem;
  for (std::size_t j = 0; j < c.temporal_filter_lengths.size(); ++j) {
    const std::size_t half = (c.temporal_filter_lengths[j] - 1) / 2;
    tem.push_back(to_rows(unit(env, m, "temporal" + std::to_string(j), {half, 0})));
  }
  f["temporal"] = concat<double>(tem, 0);
  const std::vector<Tensor<double>> front_parts{f["timbral"], f["temporal"]};
  const auto front = concat<double>(front_parts, 0);

  const Padding mid{(c.midend_kernel - 1) / 2, 0};
  auto as3 = [&](const Tensor<double>& t) { return t.reshaped({t.extent(0), T, 1}); };
  f["cnn1"] = to_rows(unit(as3(front), m, "cnn1", mid));
  f["cnn2"] = add(to_rows(unit(as3(f["cnn1"]), m, "cnn2", mid)), f["cnn1"]);
  f["cnn3"] = add(to_rows(unit(as3(f["cnn2"]), m, "cnn3", mid)), f["cnn2"]);
  const std::vector<Tensor<double>> stack_parts{front, f["cnn1"], f["cnn2"], f["cnn3"]};
  const auto stack = concat<double>(stack_parts, 0);

  Tensor<double> pooled;
  if (c.backend == Backend::TemporalPooling) {
    f["mean_pool"] = pool_mean_over_axis(stack, 1);
    f["max_pool"] = pool_max_over_axis(stack, 1);
    const std::vector<Tensor<double>> both{f["mean_pool"], f["max_pool"]};
    pooled = concat<double>(both, 0);
  } else {
    Tensor<double> scores({T});
    for (std::size_t t = 0; t < T; ++t) scores[t] = dense(column(stack, t), m.layer("attention_dense"))[0];
    f["attention_weights"] = softmax_over_axis(scores, 0);
    Tensor<double> ctx({stack.extent(0)});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < ctx.size(); ++k) ctx[k] += f["attention_weights"][t] * stack.at(k, t);
    f["context"] = ctx;
    pooled = ctx;
  }
  f["penultimate"] = relu(bn(dense(pooled, m.layer("penultimate_dense")), m, "penultimate_bn"));
  f["output"] = sigmoid(dense(f["penultimate"], m.layer("output_dense")));
  return f;
}

std::map<std::string, Tensor<double>> vgg_oracle(const Tensor<double>& patch, const Model<double>& m) {
  const ModelConfig& c = m.config;
  Tensor<double> x({1, c.vgg_input_frames(), c.dsp.n_mels});
  for (std::size_t t = 0; t < c.dsp.patch_frames; ++t)
    for (std::size_t b = 0; b < c.dsp.n_mels; ++b) x.at(0, t, b) = patch.at(t, b);
  std::map<std::string, Tensor<double>> f;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string stem = "block" + std::to_string(i + 1);
    x = pool_max(unit(x, m, stem, {1, 1}), c.vgg_pool_shapes[i].h, c.vgg_pool_shapes[i].w);
    f["pool" + std::to_string(i + 1)] = x;
  }
  f["output"] = sigmoid(dense(x.reshaped({x.size()}), m.layer("output_dense")));
  return f;
}

void check_against(const ForwardTrace<double>& trace, const std::map<std::string, Tensor<double>>& oracle) {
  CHECK(trace.keys().size() == oracle.size());
  for (const auto& [key, value] : oracle) {
    INFO(key);
    CHECK(testing::max_relative_error(trace.at(key), value) < 1e-10);
  }
}

}  // namespace

TEST_CASE("config validation") {
  CHECK_NOTHROW(musicnn_config().validate());
  CHECK_NOTHROW(musicnn_big_config().validate());
  CHECK_NOTHROW(vgg_config().validate());

  ModelConfig c = toy_musicnn_config();
  c.n_tags = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = toy_musicnn_config();
  c.timbral_filter_heights = {1.2};
  CHECK_THROWS_AS(c.validate(), Error);
  c = toy_musicnn_config();
  c.midend_kernel = 4;
  CHECK_THROWS_AS(c.validate(), Error);

  c = vgg_config();
  c.vgg_pool_shapes[4] = {6, 5};
  try {
    c.validate();
    FAIL("expected ConfigInvalid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigInvalid);
  }
}

TEST_CASE("parameter count follows the config algebra") {
  const ModelConfig c = musicnn_config();
  const auto widths = c.timbral_widths();
  CHECK(widths == std::vector<std::size_t>{86, 38});
  std::size_t n = 2;  // input_bn
  for (std::size_t w : widths) n += c.timbral_channels * 7 * w + 2 * c.timbral_channels;
  for (std::size_t len : c.temporal_filter_lengths) n += c.temporal_channels * len + 2 * c.temporal_channels;
  const std::size_t front = 2 * c.timbral_channels + 4 * c.temporal_channels;
  n += c.midend_channels * front * 7 + 2 * c.midend_channels;
  n += 2 * (c.midend_channels * c.midend_channels * 7 + 2 * c.midend_channels);
  const std::size_t stack = front + 3 * c.midend_channels;
  n += 200 * 2 * stack + 2 * 200;
  n += 50 * 200 + 50;
  CHECK(trainable_parameter_count(c) == n);

  const ModelConfig v = vgg_config();
  CHECK(v.vgg_input_frames() == 192);
  std::size_t nv = 0, in = 1;
  for (std::size_t ch : v.vgg_block_channels) {
    nv += ch * in * 9 + 2 * ch;
    in = ch;
  }
  nv += 50 * 128 + 50;
  CHECK(trainable_parameter_count(v) == nv);
}

TEST_CASE("build_model is deterministic and validated") {
  const ModelConfig c = toy_musicnn_config(Backend::Attention);
  const auto a = build_model<double>(c, Init::seeded(5)), b = build_model<double>(c, Init::seeded(5));
  CHECK(a.params == b.params);
  CHECK_FALSE(a.params == build_model<double>(c, Init::seeded(6)).params);
  CHECK(a.tags == std::vector<std::string>{"tag0", "tag1", "tag2", "tag3"});
  for (double v : a.layer("attention_dense").weights->values()) CHECK(v == 0.0);

  Model<double> bad = a;
  bad.layer("cnn2_conv").weights = Tensor<double>({1, 1, 1, 1});
  CHECK_THROWS_AS(validate_model(bad), Error);
  bad = a;
  bad.tags.pop_back();
  CHECK_THROWS_AS(validate_model(bad), Error);
}

TEST_CASE("trace keys per family and backend") {
  using K = std::vector<std::string>;
  CHECK(trace_keys(toy_musicnn_config()) ==
        K{"cnn1", "cnn2", "cnn3", "max_pool", "mean_pool", "output", "penultimate", "temporal", "timbral"});
  const auto att = trace_keys(toy_musicnn_config(Backend::Attention));
  CHECK(std::count(att.begin(), att.end(), "attention_weights") == 1);
  CHECK(std::count(att.begin(), att.end(), "context") == 1);
  CHECK(std::count(att.begin(), att.end(), "mean_pool") == 0);
  CHECK(trace_keys(toy_vgg_config()) == K{"output", "pool1", "pool2", "pool3", "pool4", "pool5"});

  SplitMix64 rng(1);
  for (const auto& c : {toy_musicnn_config(), toy_musicnn_config(Backend::Attention), toy_vgg_config()}) {
    const auto m = build_model<double>(c, Init::seeded(2));
    const auto trace = forward(random_tensor<double>({24, 16}, rng), m);
    CHECK(trace.keys() == trace_keys(c));
    CHECK(trace.output().shape() == Shape{c.n_tags});
    for (double v : trace.output().values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("musicnn matches the composition oracle") {
  SplitMix64 rng(3);
  for (Backend backend : {Backend::TemporalPooling, Backend::Attention}) {
    const auto m = random_model(toy_musicnn_config(backend), 4);
    const auto patch = random_tensor<double>({24, 16}, rng, -2, 2);
    check_against(forward(patch, m), musicnn_oracle(patch, m));
    const auto fe = musicnn_frontend(patch, m);
    CHECK(fe.timbral.shape() == Shape{3, 24});
    CHECK(fe.temporal.shape() == Shape{2, 24});
  }
}

TEST_CASE("vgg matches the composition oracle") {
  SplitMix64 rng(5);
  const auto m = random_model(toy_vgg_config(), 6);
  CHECK(m.config.vgg_input_frames() == 24);
  const auto patch = random_tensor<double>({24, 16}, rng, -2, 2);
  check_against(forward(patch, m), vgg_oracle(patch, m));

  ModelConfig odd = toy_vgg_config();
  odd.dsp.patch_frames = 22;
  const auto mo = random_model(odd, 6);
  CHECK(odd.vgg_input_frames() == 24);
  const auto p22 = random_tensor<double>({22, 16}, rng);
  check_against(forward(p22, mo), vgg_oracle(p22, mo));
}

TEST_CASE("default vgg pools reduce the padded patch to one cell") {
  const ModelConfig c = vgg_config();
  std::size_t h = c.vgg_input_frames(), w = c.dsp.n_mels;
  for (const auto& p : c.vgg_pool_shapes) {
    CHECK(h % p.h == 0);
    CHECK(w % p.w == 0);
    h /= p.h;
    w /= p.w;
  }
  CHECK(h == 1);
  CHECK(w == 1);
}

TEST_CASE("zero-initialized models") {
  SplitMix64 rng(7);
  const auto patch = random_tensor<double>({24, 16}, rng);
  const auto vgg = build_model<double>(toy_vgg_config(), Init::zeros());
  const auto tv = forward(patch, vgg);
  for (int i = 1; i <= 5; ++i)
    for (double v : tv.at("pool" + std::to_string(i)).values()) CHECK(v == 0.0);
  for (double v : tv.output().values()) CHECK(v == 0.5);

  const auto mus = build_model<double>(toy_musicnn_config(), Init::zeros());
  const auto tm = forward(patch, mus);
  for (double v : tm.at("cnn1").values()) CHECK(v == 0.0);
}

TEST_CASE("mid-end residual with a zeroed convolution") {
  SplitMix64 rng(8);
  auto m = random_model(toy_musicnn_config(), 9);
  m.layer("cnn2_conv").weights = Tensor<double>(m.layer("cnn2_conv").weights->shape());
  auto& b = m.layer("cnn2_bn");
  b.bn_gamma = Tensor<double>(b.bn_gamma->shape(), 1.0);
  b.bn_beta = Tensor<double>(b.bn_beta->shape());
  b.bn_mean = Tensor<double>(b.bn_mean->shape());
  b.bn_var = Tensor<double>(b.bn_var->shape(), 1.0);
  const auto mid = musicnn_midend(random_tensor<double>({m.config.frontend_channels(), 24}, rng), m);
  CHECK(mid.cnn2 == mid.cnn1);
}

TEST_CASE("temporal path is constant in time on a constant patch") {
  const auto m = random_model(toy_musicnn_config(), 10);
  const auto fe = musicnn_frontend(Tensor<double>({24, 16}, 0.7), m);
  const std::size_t half = 4;
  for (std::size_t c = 0; c < fe.temporal.extent(0); ++c)
    for (std::size_t t = half; t + half < 24; ++t) CHECK(fe.temporal.at(c, t) == doctest::Approx(fe.temporal.at(c, half)));
}

TEST_CASE("front-end is time-translation covariant away from the edges") {
  SplitMix64 rng(11);
  const auto m = random_model(toy_musicnn_config(), 12);
  const auto patch = random_tensor<double>({24, 16}, rng);
  const std::size_t s = 5, half = 4;
  Tensor<double> shifted({24, 16});
  for (std::size_t t = 0; t < 24; ++t)
    for (std::size_t b = 0; b < 16; ++b) shifted.at((t + s) % 24, b) = patch.at(t, b);
  const auto a = musicnn_frontend(patch, m), b = musicnn_frontend(shifted, m);
  for (std::size_t t = half + 1; t + half + 1 < 24 - s; ++t)
    for (std::size_t c = 0; c < a.concat.extent(0); ++c) CHECK(std::abs(b.concat.at(c, t + s) - a.concat.at(c, t)) < 1e-6);
}

TEST_CASE("attention back-end") {
  SplitMix64 rng(13);
  auto m = random_model(toy_musicnn_config(Backend::Attention), 14);
  const std::size_t C = m.config.stack_channels();
  const auto stack = random_tensor<double>({C, 24}, rng);

  auto& att = m.layer("attention_dense");
  att.weights = Tensor<double>(att.weights->shape());
  auto out = backend_attention(stack, m);
  const auto mean = pool_mean_over_axis(stack, 1);
  for (double w : out.attention_weights.values()) CHECK(w == doctest::Approx(1.0 / 24));
  CHECK(testing::max_relative_error(out.context, mean) < 1e-12);

  // Pooling back-end with the same downstream weights sees [mean, max];
  // context == mean_pool shows up as identical front halves.
  auto pm = random_model(toy_musicnn_config(), 14);
  const auto pooled = backend_pooling(stack, pm);
  CHECK(testing::max_relative_error(pooled.mean_pool, out.context) < 1e-12);

  // A score spike at frame 9 of about +20 over the rest.
  att.weights = Tensor<double>(att.weights->shape());
  Tensor<double> spiked = stack;
  for (std::size_t k = 0; k < C; ++k) spiked.at(k, 9) = 0.0;
  spiked.at(0, 9) = 1.0;
  for (std::size_t t = 0; t < 24; ++t)
    if (t != 9) spiked.at(0, t) = 0.0;
  att.weights->at(0, 0) = 20.0;
  out = backend_attention(spiked, m);
  CHECK(out.attention_weights[9] > 0.999);
  for (std::size_t k = 0; k < C; ++k) CHECK(std::abs(out.context[k] - spiked.at(k, 9)) < 1e-6);

  att.weights = random_tensor<double>(att.weights->shape(), rng, -3, 3);
  out = backend_attention(stack, m);
  double sum = 0;
  for (double w : out.attention_weights.values()) sum += w;
  CHECK(std::abs(sum - 1.0) < 1e-9);
  CHECK_THROWS_AS(backend_attention(random_tensor<double>({C + 1, 24}, rng), m), Error);
}

TEST_CASE("pooling back-end on a time-constant stack") {
  const auto m = random_model(toy_musicnn_config(), 15);
  SplitMix64 rng(16);
  const auto col = random_tensor<double>({m.config.stack_channels()}, rng);
  Tensor<double> stack({col.size(), 24});
  for (std::size_t k = 0; k < col.size(); ++k)
    for (std::size_t t = 0; t < 24; ++t) stack.at(k, t) = col[k];
  const auto out = backend_pooling(stack, m);
  CHECK(testing::max_relative_error(out.mean_pool, out.max_pool) < 1e-12);
}

TEST_CASE("output scaling keeps the tag order") {
  SplitMix64 rng(17);
  auto m = random_model(toy_musicnn_config(Backend::TemporalPooling, 8), 18);
  auto& out = m.layer("output_dense");
  out.bias = Tensor<double>(out.bias->shape());
  const auto patch = random_tensor<double>({24, 16}, rng);
  auto order = [&] {
    const auto y = forward(patch, m).output();
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
    return idx;
  };
  const auto base = order();
  const auto y0 = forward(patch, m).output();
  for (double alpha : {0.25, 3.0}) {
    for (auto& w : out.weights->values()) w *= alpha;
    CHECK(order() == base);
    CHECK_FALSE(forward(patch, m).output() == y0);
    for (auto& w : out.weights->values()) w /= alpha;
  }
}

TEST_CASE("batched inference matches per-patch forward") {
  SplitMix64 rng(19);
  for (const auto& c : {toy_musicnn_config(), toy_musicnn_config(Backend::Attention), toy_vgg_config()}) {
    const auto m = random_model(c, 20);
    const auto patches = testing::random_patches<double>(c, 3, 21);
    const auto pass = forward_batch<double>(m, patches, BnMode::Inference);
    for (std::size_t b = 0; b < 3; ++b) CHECK(pass.traces[b].output() == forward(patches[b], m).output());
  }
}

TEST_CASE("end-to-end gradients of the toy models") {
  for (const auto& c : {toy_musicnn_config(), toy_musicnn_config(Backend::Attention), toy_vgg_config()}) {
    auto m = build_model<double>(c, Init::seeded(7));
    const auto patches = testing::random_patches<double>(c, 3, 11);
    const auto targets = testing::random_targets(3, c.n_tags, 13);
    const auto report = testing::check_model_gradients(m, patches, targets, 1e-5, 1e-4);
    CHECK_MESSAGE(report.passed(), report.summary());
  }
}

TEST_CASE("every trainable tensor receives gradient") {
  for (const auto& c : {toy_musicnn_config(), toy_musicnn_config(Backend::Attention), toy_vgg_config()}) {
    const auto m = build_model<double>(c, Init::seeded(3));
    const auto patches = testing::random_patches<double>(c, 4, 5);
    const auto targets = testing::random_targets(4, c.n_tags, 6);
    const auto pass = forward_batch<double>(m, patches, BnMode::Training);
    std::vector<Tensor<double>> grads;
    for (std::size_t b = 0; b < 4; ++b) {
      Tensor<double> g = pass.traces[b].output();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= targets[b][i];
      grads.push_back(g);
    }
    auto g = backward_batch<double>(m, pass, grads);
    for_each_trainable(g, [](const std::string& name, const Tensor<double>& t) {
      INFO(name);
      CHECK(std::any_of(t.values().begin(), t.values().end(), [](double v) { return v != 0.0; }));
    });
  }
}

TEST_CASE("batch-norm calibration and running statistics") {
  const ModelConfig c = toy_musicnn_config();
  auto m = build_model<double>(c, Init::seeded(8));
  const auto patches = testing::random_patches<double>(c, 4, 9);
  calibrate_batchnorm<double>(m, patches);
  const auto train = forward_batch<double>(m, patches, BnMode::Training);
  const auto infer = forward_batch<double>(m, patches, BnMode::Inference);
  for (std::size_t b = 0; b < 4; ++b) {
    CHECK(testing::max_relative_error(infer.traces[b].output(), train.traces[b].output()) < 1e-9);
  }

  auto blended = build_model<double>(c, Init::seeded(8));
  const auto before = *blended.layer("cnn1_bn").bn_mean;
  update_running_stats<double>(blended, train, 0.9);
  const auto& stats = train.bn_stats;
  const std::size_t idx = blended.index_of("cnn1_bn");
  const auto it = std::find_if(stats.begin(), stats.end(), [&](const auto& s) { return s.first == idx; });
  REQUIRE(it != stats.end());
  for (std::size_t k = 0; k < before.size(); ++k) {
    CHECK(blended.layer("cnn1_bn").bn_mean->at(k) == doctest::Approx(0.9 * before[k] + 0.1 * it->second.mean[k]));
  }
}

TEST_CASE("shape errors") {
  const auto m = build_model<double>(toy_musicnn_config(), Init::seeded(1));
  CHECK_THROWS_AS(forward(Tensor<double>({23, 16}), m), Error);
  CHECK_THROWS_AS(forward(Tensor<double>({24, 15}), m), Error);
  const auto v = build_model<double>(toy_vgg_config(), Init::seeded(1));
  CHECK_THROWS_AS(vgg_forward(Tensor<double>({2, 24, 16}), v), Error);
}
