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

#include "musicnn/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>

#include "musicnn/error.hpp"

namespace musicnn {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV codec assumes a little-endian host");

std::uint16_t read_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

struct FormatChunk {
  std::uint16_t code = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t bits = 0;
};

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::CorruptHeader, "missing RIFF/WAVE header");
  }

  std::optional<FormatChunk> fmt;
  std::span<const std::uint8_t> data;
  bool have_data = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || available < 16) throw Error(ErrorCode::CorruptHeader, "fmt chunk too short");
      const std::uint8_t* f = bytes.data() + body;
      fmt = FormatChunk{read_u16(f), read_u16(f + 2), read_u32(f + 4), read_u16(f + 14)};
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      // A data chunk whose declared length runs past the end of the file is
      // truncated to what is present.
      data = bytes.subspan(body, std::min<std::size_t>(size, available));
      have_data = true;
      break;
    }
    if (size > available) break;
    pos = body + size + (size & 1u);
  }
  if (!fmt) throw Error(ErrorCode::CorruptHeader, "missing fmt chunk");
  if (!have_data) throw Error(ErrorCode::CorruptHeader, "missing data chunk");

  if (fmt->code != 1 && fmt->code != 3) {
    throw Error(ErrorCode::UnsupportedFormat, "compression code " + std::to_string(fmt->code) +
                                                  " (only PCM=1 and IEEE float=3 are supported)");
  }
  if ((fmt->code == 1 && fmt->bits != 16) || (fmt->code == 3 && fmt->bits != 32)) {
    throw Error(ErrorCode::UnsupportedFormat, std::to_string(fmt->bits) + "-bit samples for format code " +
                                                  std::to_string(fmt->code));
  }
  if (fmt->channels != 1 && fmt->channels != 2) {
    throw Error(ErrorCode::UnsupportedFormat, std::to_string(fmt->channels) + " channels (mono or stereo only)");
  }
  if (fmt->sample_rate == 0) throw Error(ErrorCode::CorruptHeader, "sample rate is zero");

  const std::size_t sample_bytes = fmt->bits / 8;
  const std::size_t frame_bytes = sample_bytes * fmt->channels;
  const std::size_t frames = data.size() / frame_bytes;
  if (frames == 0) throw Error(ErrorCode::EmptyAudio, "data chunk holds no samples");

  Waveform w;
  w.sample_rate = fmt->sample_rate;
  w.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt->channels; ++c) {
      const std::uint8_t* p = data.data() + i * frame_bytes + c * sample_bytes;
      if (fmt->code == 1) {
        acc += static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        acc += static_cast<double>(std::bit_cast<float>(read_u32(p)));
      }
    }
    w.samples[i] = acc / fmt->channels;
  }
  return w;
}

Waveform load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav(std::span<const double> interleaved, std::uint32_t sample_rate,
                                     WavEncoding encoding, std::uint16_t channels) {
  if (channels == 0 || sample_rate == 0 || interleaved.size() % channels != 0) {
    throw Error(ErrorCode::InvalidArgument, "encode_wav: inconsistent channel count or sample rate");
  }
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint16_t code = encoding == WavEncoding::Pcm16 ? 1 : 3;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, code);
  put_u16(out, channels);
  put_u32(out, sample_rate);
  put_u32(out, sample_rate * channels * (bits / 8));
  put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double x : interleaved) {
    if (encoding == WavEncoding::Pcm16) {
      const double scaled = std::clamp(std::round(x * 32768.0), -32768.0, 32767.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    } else {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    }
  }
  return out;
}

void write_wav(const std::filesystem::path& path, std::span<const double> interleaved, std::uint32_t sample_rate,
               WavEncoding encoding, std::uint16_t channels) {
  const auto bytes = encode_wav(interleaved, sample_rate, encoding, channels);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to '" + path.string() + "'");
}

}  // namespace musicnn
