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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace musicnn {

enum class ErrorCode {
  InvalidArgument,
  IoError,
  // audio ingestion and DSP
  UnsupportedFormat,
  CorruptHeader,
  EmptyAudio,
  AudioTooShort,
  DegenerateBand,
  // tensors and networks
  ShapeMismatch,
  NumericFault,
  ConfigInvalid,
  // weight containers and registry
  BadMagic,
  ManifestCorrupt,
  PayloadTruncated,
  UnknownModel,
  // tagging / extraction
  TopNOutOfRange,
  UnknownFeatureKey,
  // transfer learning
  SingleClass,
  DegenerateLabels,
  NoPositives,
  AllColumnsDegenerate,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Every failure raised by the library. The message is prefixed with the code
/// name so diagnostics printed by the tools are self-describing.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::EmptyAudio: return "EmptyAudio";
    case ErrorCode::AudioTooShort: return "AudioTooShort";
    case ErrorCode::DegenerateBand: return "DegenerateBand";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NumericFault: return "NumericFault";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::ManifestCorrupt: return "ManifestCorrupt";
    case ErrorCode::PayloadTruncated: return "PayloadTruncated";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::TopNOutOfRange: return "TopNOutOfRange";
    case ErrorCode::UnknownFeatureKey: return "UnknownFeatureKey";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::AllColumnsDegenerate: return "AllColumnsDegenerate";
  }
  return "Unknown";
}

}  // namespace musicnn
