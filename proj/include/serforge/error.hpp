/* Copyright 2026 The SER-Forge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace serforge {

// Every failure raised by the library carries one of these kinds so that
// callers (the CLI in particular) can map it onto a stable exit code.
enum class ErrorKind {
  kParse,
  kUnsupportedFormat,
  kEmptyAudio,
  kTooShort,
  kTooSmall,
  kDegenerateFilter,
  kBadStats,
  kShape,
  kNotScalar,
  kConfig,
  kTokenOverflow,
  kLabel,
  kEmptySplit,
  kVersion,
  kDuplicateId,
  kTooFew,
  kEmptyEval,
  kNumerical,
  kIo,
};

inline std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorKind::kEmptyAudio: return "EmptyAudio";
    case ErrorKind::kTooShort: return "TooShort";
    case ErrorKind::kTooSmall: return "TooSmall";
    case ErrorKind::kDegenerateFilter: return "DegenerateFilter";
    case ErrorKind::kBadStats: return "BadStats";
    case ErrorKind::kShape: return "ShapeError";
    case ErrorKind::kNotScalar: return "NotScalar";
    case ErrorKind::kConfig: return "ConfigError";
    case ErrorKind::kTokenOverflow: return "TokenOverflow";
    case ErrorKind::kLabel: return "LabelError";
    case ErrorKind::kEmptySplit: return "EmptySplit";
    case ErrorKind::kVersion: return "VersionError";
    case ErrorKind::kDuplicateId: return "DuplicateId";
    case ErrorKind::kTooFew: return "TooFew";
    case ErrorKind::kEmptyEval: return "EmptyEval";
    case ErrorKind::kNumerical: return "NumericalError";
    case ErrorKind::kIo: return "IoError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace serforge
