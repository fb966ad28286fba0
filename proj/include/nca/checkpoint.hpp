// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint layout, all integers and reals little-endian:
//
//   "NCAC"                              4-byte magic
//   u32 version                         currently 1
//   i32 channels, steps, update_hidden, classifier_hidden, num_classes
//   f64 fire_rate
//   u32 array count (10)
//   per array, in k1 k2 W1 b1 W2 b2 W3 b3 W4 b4 order:
//     u32 name length, name bytes, u32 rank, u32 dims[rank], f32 values
//   u64 FNV-1a checksum of every preceding byte

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nca/model.hpp"

namespace nca {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  NcaConfig config;
  NcaParams<float> params;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> encode_checkpoint(const NcaParams<float>& params, const NcaConfig& config);
/// Errors: kBadMagic, kUnknownVersion, kTruncated, kChecksumMismatch,
/// kShapeMismatch (arrays inconsistent with the stored config).
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const NcaParams<float>& params, const NcaConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nca
