// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nca {

enum class ErrorCode {
  kShapeMismatch,
  kInvalidArgument,
  kInvalidState,
  kIo,
  kDecode,
  kUnsupportedFormat,
  kConfig,
  kUsage,
  kBadMagic,
  kUnknownVersion,
  kTruncated,
  kChecksumMismatch,
  kUnmappedLabel,
  kEmptyClass,
  kNonFiniteLoss,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries a machine-readable code
/// alongside the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace nca
