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

#include "musicnn/model_store.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>

namespace musicnn {
namespace {

static_assert(std::endian::native == std::endian::little, "container codec assumes a little-endian host");

constexpr std::size_t kHeaderBytes = 12;

[[noreturn]] void corrupt(const std::string& what) { throw Error(ErrorCode::ManifestCorrupt, what); }

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Seq, typename F>
std::string join(const Seq& seq, F&& f) {
  std::string out;
  for (const auto& v : seq) {
    if (!out.empty()) out += ' ';
    out += f(v);
  }
  return out;
}

std::string dims_string(const Shape& shape) {
  std::string out;
  for (std::size_t d : shape) {
    if (!out.empty()) out += ',';
    out += std::to_string(d);
  }
  return out;
}

struct TensorSlot {
  std::string name;
  std::optional<Tensor<float>>* tensor;
};

std::vector<TensorSlot> tensor_slots(std::vector<LayerParams<float>>& layers) {
  std::vector<TensorSlot> out;
  for (auto& l : layers) {
    if (l.weights) out.push_back({l.name + ".weights", &l.weights});
    if (l.bias) out.push_back({l.name + ".bias", &l.bias});
    if (l.bn_gamma) out.push_back({l.name + ".gamma", &l.bn_gamma});
    if (l.bn_beta) out.push_back({l.name + ".beta", &l.bn_beta});
    if (l.bn_mean) out.push_back({l.name + ".running_mean", &l.bn_mean});
    if (l.bn_var) out.push_back({l.name + ".running_var", &l.bn_var});
  }
  return out;
}

std::string config_manifest(const ModelConfig& c) {
  std::ostringstream m;
  const DspConfig& d = c.dsp;
  m << "family " << to_string(c.family) << '\n'
    << "backend " << to_string(c.backend) << '\n'
    << "n_tags " << c.n_tags << '\n'
    << "sample_rate " << d.sample_rate << '\n'
    << "fft_size " << d.fft_size << '\n'
    << "hop_size " << d.hop_size << '\n'
    << "n_mels " << d.n_mels << '\n'
    << "fmin " << fmt_double(d.fmin) << '\n'
    << "fmax " << fmt_double(d.fmax) << '\n'
    << "log_offset " << fmt_double(d.log_offset) << '\n'
    << "patch_frames " << d.patch_frames << '\n'
    << "patch_hop_frames " << d.patch_hop_frames << '\n'
    << "timbral_filter_heights " << join(c.timbral_filter_heights, fmt_double) << '\n'
    << "timbral_channels " << c.timbral_channels << '\n'
    << "temporal_filter_lengths " << join(c.temporal_filter_lengths, [](std::size_t v) { return std::to_string(v); })
    << '\n'
    << "temporal_channels " << c.temporal_channels << '\n'
    << "midend_channels " << c.midend_channels << '\n'
    << "midend_kernel " << c.midend_kernel << '\n'
    << "penultimate_units " << c.penultimate_units << '\n'
    << "vgg_block_channels " << join(c.vgg_block_channels, [](std::size_t v) { return std::to_string(v); }) << '\n'
    << "vgg_pool_shapes "
    << join(c.vgg_pool_shapes, [](const PoolShape& p) { return std::to_string(p.h) + "x" + std::to_string(p.w); })
    << '\n';
  return m.str();
}

// ---- manifest parsing ----

std::size_t parse_size(std::string_view text, std::string_view key) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    corrupt("'" + std::string(key) + "' has malformed integer '" + std::string(text) + "'");
  }
  return v;
}

double parse_double(std::string_view text, std::string_view key) {
  const std::string s(text);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) corrupt("'" + std::string(key) + "' has malformed number '" + s + "'");
  return v;
}

std::vector<std::string_view> split_on(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = text.find(sep, start);
    if (end == std::string_view::npos) {
      out.push_back(text.substr(start));
      break;
    }
    out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

struct TensorRecord {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
};

struct Manifest {
  std::string name;
  ModelConfig config;
  std::vector<std::string> tags;
  std::vector<TensorRecord> tensors;
};

void apply_config_key(ModelConfig& c, std::string_view key, std::string_view value) {
  auto size_list = [&] {
    std::vector<std::size_t> out;
    for (auto part : split_on(value, ' ')) out.push_back(parse_size(part, key));
    return out;
  };
  DspConfig& d = c.dsp;
  try {
    if (key == "family") c.family = parse_family(value);
    else if (key == "backend") c.backend = parse_backend(value);
    else if (key == "n_tags") c.n_tags = parse_size(value, key);
    else if (key == "sample_rate") d.sample_rate = static_cast<std::uint32_t>(parse_size(value, key));
    else if (key == "fft_size") d.fft_size = parse_size(value, key);
    else if (key == "hop_size") d.hop_size = parse_size(value, key);
    else if (key == "n_mels") d.n_mels = parse_size(value, key);
    else if (key == "fmin") d.fmin = parse_double(value, key);
    else if (key == "fmax") d.fmax = parse_double(value, key);
    else if (key == "log_offset") d.log_offset = parse_double(value, key);
    else if (key == "patch_frames") d.patch_frames = parse_size(value, key);
    else if (key == "patch_hop_frames") d.patch_hop_frames = parse_size(value, key);
    else if (key == "timbral_filter_heights") {
      c.timbral_filter_heights.clear();
      for (auto part : split_on(value, ' ')) c.timbral_filter_heights.push_back(parse_double(part, key));
    } else if (key == "timbral_channels") c.timbral_channels = parse_size(value, key);
    else if (key == "temporal_filter_lengths") c.temporal_filter_lengths = size_list();
    else if (key == "temporal_channels") c.temporal_channels = parse_size(value, key);
    else if (key == "midend_channels") c.midend_channels = parse_size(value, key);
    else if (key == "midend_kernel") c.midend_kernel = parse_size(value, key);
    else if (key == "penultimate_units") c.penultimate_units = parse_size(value, key);
    else if (key == "vgg_block_channels") c.vgg_block_channels = size_list();
    else if (key == "vgg_pool_shapes") {
      c.vgg_pool_shapes.clear();
      for (auto part : split_on(value, ' ')) {
        const auto hw = split_on(part, 'x');
        if (hw.size() != 2) corrupt("malformed pool shape '" + std::string(part) + "'");
        c.vgg_pool_shapes.push_back({parse_size(hw[0], key), parse_size(hw[1], key)});
      }
    } else corrupt("unknown manifest key '" + std::string(key) + "'");
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ManifestCorrupt) throw;
    corrupt("bad value for '" + std::string(key) + "': " + e.what());
  }
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  bool ended = false;
  for (auto line : split_on(text, '\n')) {
    if (ended) {
      if (!line.empty()) corrupt("content after 'end'");
      continue;
    }
    if (line == "end") {
      ended = true;
      continue;
    }
    const std::size_t space = line.find(' ');
    if (space == std::string_view::npos) corrupt("malformed manifest line '" + std::string(line) + "'");
    const std::string_view key = line.substr(0, space);
    const std::string_view value = line.substr(space + 1);
    if (key == "name") {
      m.name = value;
    } else if (key == "tag") {
      m.tags.emplace_back(value);
    } else if (key == "tensor") {
      const auto parts = split_on(value, ' ');
      if (parts.size() != 4) corrupt("malformed tensor record '" + std::string(value) + "'");
      if (parts[2] != "f32") corrupt("tensor '" + std::string(parts[0]) + "' has unsupported dtype '" +
                                     std::string(parts[2]) + "'");
      TensorRecord r;
      r.name = parts[0];
      for (auto d : split_on(parts[1], ',')) r.shape.push_back(parse_size(d, "tensor shape"));
      r.offset = parse_size(parts[3], "tensor offset");
      m.tensors.push_back(std::move(r));
    } else {
      apply_config_key(m.config, key, value);
    }
  }
  if (!ended) corrupt("manifest is missing its 'end' line");
  return m;
}

std::string_view manifest_view(std::span<const std::uint8_t> bytes, std::size_t& payload_start) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic.data(), 4) != 0) {
    throw Error(ErrorCode::BadMagic, "not an MCN1 container");
  }
  if (bytes.size() < kHeaderBytes) throw Error(ErrorCode::PayloadTruncated, "container header is truncated");
  std::uint64_t length = 0;
  std::memcpy(&length, bytes.data() + 4, 8);
  if (length > bytes.size() - kHeaderBytes) {
    throw Error(ErrorCode::PayloadTruncated, "manifest length " + std::to_string(length) + " exceeds the file");
  }
  payload_start = kHeaderBytes + static_cast<std::size_t>(length);
  return {reinterpret_cast<const char*>(bytes.data() + kHeaderBytes), static_cast<std::size_t>(length)};
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_container(const Model<T>& model, std::string_view name) {
  validate_model(model);
  if (name.empty() || name.find_first_of(" \n\r") != std::string_view::npos) {
    throw Error(ErrorCode::InvalidArgument, "container name must be non-empty without spaces or newlines");
  }
  for (const auto& tag : model.tags) {
    if (tag.empty() || tag.find_first_of("\n\r") != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "tag '" + tag + "' cannot be stored in a manifest");
    }
  }
  Model<float> f = model.template cast<float>();
  const auto slots = tensor_slots(f.params);

  std::string manifest = "name " + std::string(name) + "\n" + config_manifest(f.config);
  for (const auto& tag : f.tags) manifest += "tag " + tag + "\n";
  std::size_t offset = 0;
  for (const auto& s : slots) {
    const Tensor<float>& t = **s.tensor;
    manifest += "tensor " + s.name + " " + dims_string(t.shape()) + " f32 " + std::to_string(offset) + "\n";
    offset += t.size() * sizeof(float);
  }
  manifest += "end\n";

  std::vector<std::uint8_t> out(kHeaderBytes);
  std::memcpy(out.data(), kContainerMagic.data(), 4);
  const std::uint64_t length = manifest.size();
  std::memcpy(out.data() + 4, &length, 8);
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const auto& s : slots) {
    const Tensor<float>& t = **s.tensor;
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
  }
  return out;
}

template <typename T>
Model<T> decode_container(std::span<const std::uint8_t> bytes) {
  std::size_t payload_start = 0;
  const Manifest m = parse_manifest(manifest_view(bytes, payload_start));
  try {
    m.config.validate();
  } catch (const Error& e) {
    corrupt(std::string("manifest config is invalid: ") + e.what());
  }
  if (m.tags.size() != m.config.n_tags) {
    corrupt("manifest lists " + std::to_string(m.tags.size()) + " tags for n_tags " + std::to_string(m.config.n_tags));
  }

  Model<float> model = build_model<float>(m.config, Init::zeros(), m.tags);
  const auto slots = tensor_slots(model.params);
  std::map<std::string, const TensorRecord*> records;
  for (const auto& r : m.tensors) {
    if (!records.emplace(r.name, &r).second) corrupt("tensor '" + r.name + "' appears twice");
  }
  for (const auto& s : slots) {
    auto it = records.find(s.name);
    if (it == records.end()) corrupt("tensor '" + s.name + "' is missing from the manifest");
    const Shape& expected = (*s.tensor)->shape();
    if (it->second->shape != expected) {
      throw Error(ErrorCode::ShapeMismatch, "tensor '" + s.name + "' has shape " + shape_string(it->second->shape) +
                                                 ", config implies " + shape_string(expected));
    }
  }
  if (records.size() != slots.size()) corrupt("manifest lists tensors the config does not define");

  std::size_t expected_offset = 0;
  for (const auto& r : m.tensors) {
    if (r.offset != expected_offset) {
      corrupt("tensor '" + r.name + "' offset " + std::to_string(r.offset) + " is not contiguous (expected " +
              std::to_string(expected_offset) + ")");
    }
    expected_offset += shape_size(r.shape) * sizeof(float);
  }
  const std::size_t payload = bytes.size() - payload_start;
  if (payload < expected_offset) {
    throw Error(ErrorCode::PayloadTruncated, "payload has " + std::to_string(payload) + " bytes, manifest needs " +
                                                 std::to_string(expected_offset));
  }
  if (payload > expected_offset) corrupt("payload has " + std::to_string(payload - expected_offset) + " trailing bytes");

  for (const auto& s : slots) {
    const TensorRecord& r = *records.at(s.name);
    Tensor<float>& t = **s.tensor;
    std::memcpy(t.data(), bytes.data() + payload_start + r.offset, t.size() * sizeof(float));
    check_finite(t, "tensor '" + s.name + "'");
  }
  validate_model(model);
  if constexpr (std::is_same_v<T, float>) {
    return model;
  } else {
    return model.template cast<T>();
  }
}

std::string container_name(std::span<const std::uint8_t> bytes) {
  std::size_t payload_start = 0;
  return parse_manifest(manifest_view(bytes, payload_start)).name;
}

template <typename T>
void save_model(const Model<T>& model, const std::filesystem::path& path, std::string_view name) {
  const auto bytes = encode_container(model, name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to '" + path.string() + "'");
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container<T>(bytes);
}

template <typename T>
Model<T> resolve_model(std::string_view name_or_path) {
  const std::filesystem::path p(name_or_path);
  if (p.extension() == ".mcn") return load_model<T>(p);
  return registry_model<T>(name_or_path);
}

template std::vector<std::uint8_t> encode_container<float>(const Model<float>&, std::string_view);
template std::vector<std::uint8_t> encode_container<double>(const Model<double>&, std::string_view);
template Model<float> decode_container<float>(std::span<const std::uint8_t>);
template Model<double> decode_container<double>(std::span<const std::uint8_t>);
template void save_model<float>(const Model<float>&, const std::filesystem::path&, std::string_view);
template void save_model<double>(const Model<double>&, const std::filesystem::path&, std::string_view);
template Model<float> load_model<float>(const std::filesystem::path&);
template Model<double> load_model<double>(const std::filesystem::path&);
template Model<float> resolve_model<float>(std::string_view);
template Model<double> resolve_model<double>(std::string_view);

}  // namespace musicnn
