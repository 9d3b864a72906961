// SPDX-License-Identifier: Apache-2.0
//
// MMF1 feature files: one dense float32 matrix per (video, modality).
//
//   offset  size        field
//   0       4           magic "MMF1"
//   4       1           dtype (1 = float32)
//   5       1           ndim
//   6       2           reserved, zero
//   8       4*ndim      dims, u32 little-endian
//   ...     4*numel     payload, row-major float32 little-endian
//   end-4   4           CRC-32 (zlib polynomial) of all preceding bytes

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "filmhred/tensor.hpp"

namespace fh {

enum class Modality { kVideo, kAudio };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& name);

inline constexpr std::size_t kVideoFeatureDim = 1024;  // I3D Mixed_7c, spatially pooled
inline constexpr std::size_t kAudioFeatureDim = 128;   // VGGish

struct FeatureTrack {
  Modality modality = Modality::kVideo;
  std::size_t rows = 0;
  std::size_t dims = 0;
  std::vector<float> values;  // rows * dims, row-major
  bool synthetic_fill = false;  // set when substituted for a missing file

  float at(std::size_t r, std::size_t c) const { return values[r * dims + c]; }
  Tensor to_tensor() const;

  friend bool operator==(const FeatureTrack& a, const FeatureTrack& b) {
    return a.modality == b.modality && a.rows == b.rows && a.dims == b.dims && a.values == b.values;
  }
};

std::vector<std::uint8_t> encode_features(const FeatureTrack& track);
/// `tag` overrides modality inference; otherwise the modality is taken from
/// the dims (1024 video, 128 audio).
FeatureTrack decode_features(const std::vector<std::uint8_t>& bytes,
                             std::optional<Modality> tag = std::nullopt,
                             const std::string& origin = "<memory>");

void write_features(const std::filesystem::path& path, const FeatureTrack& track);
/// Infers modality from the parent directory name (video/ or audio/) when
/// present, else from the dims.
FeatureTrack read_features(const std::filesystem::path& path);

/// L equi-distant rows by nearest index: row i of the output is input row
/// floor(i * rows / L).
FeatureTrack resample_track(const FeatureTrack& track, std::size_t target_rows);

/// A single all-zero frame flagged as synthetic; stands in for missing audio.
FeatureTrack zero_track(Modality modality, std::size_t dims);

/// Locates `<root>/features/<modality>/<video_id>.mmf1`.
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path root) : root_(std::move(root)) {}

  std::filesystem::path path(Modality m, const std::string& video_id) const;
  bool has(Modality m, const std::string& video_id) const;
  FeatureTrack load(Modality m, const std::string& video_id) const;
  void save(const std::string& video_id, const FeatureTrack& track) const;

 private:
  std::filesystem::path root_;
};

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size);

}  // namespace fh
