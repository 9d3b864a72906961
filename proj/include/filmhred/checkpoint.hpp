// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file layout (all integers little-endian):
//
//   "FHCK" | u32 version | u64 manifest length | manifest (UTF-8 JSON)
//   | float64 blobs | u32 CRC-32 of every preceding byte
//
// The manifest lists each tensor's name, shape and element offset into the
// blob section, plus the vocabulary, config snapshot and training metadata.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "filmhred/tensor.hpp"

namespace fh {

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor>> parameters;  // store order
  std::vector<std::pair<std::string, Tensor>> optimizer;   // "m/<param>", "v/<param>", "vhat/<param>"
  std::uint64_t optimizer_steps = 0;
  std::string config;  // key = value lines
  std::vector<std::string> vocabulary;
  double best_bleu4 = 0.0;
  std::uint64_t best_epoch = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError classified as bad magic, version mismatch, truncation,
/// checksum failure or malformed content.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fh
