// SPDX-License-Identifier: Apache-2.0

#include "filmhred/features.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "filmhred/errors.hpp"

namespace fh {

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'M', 'F', '1'};
constexpr std::uint8_t kDtypeF32 = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  while (size > 0) {
    const uInt n = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, n);
    data += n;
    size -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string modality_name(Modality m) { return m == Modality::kVideo ? "video" : "audio"; }

Modality parse_modality(const std::string& name) {
  if (name == "video") return Modality::kVideo;
  if (name == "audio") return Modality::kAudio;
  throw DataError("unknown modality '" + name + "'");
}

Tensor FeatureTrack::to_tensor() const {
  std::vector<double> d(values.begin(), values.end());
  return Tensor(Shape{rows, dims}, std::move(d));
}

std::vector<std::uint8_t> encode_features(const FeatureTrack& track) {
  if (track.rows == 0 || track.dims == 0 || track.values.size() != track.rows * track.dims) {
    throw DataError("feature track has inconsistent shape");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kDtypeF32);
  out.push_back(2);
  out.push_back(0);
  out.push_back(0);
  put_u32(out, static_cast<std::uint32_t>(track.rows));
  put_u32(out, static_cast<std::uint32_t>(track.dims));
  out.reserve(out.size() + 4 * track.values.size() + 4);
  for (float v : track.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

FeatureTrack decode_features(const std::vector<std::uint8_t>& bytes, std::optional<Modality> tag,
                             const std::string& origin) {
  using K = FormatError::Kind;
  if (bytes.size() < 4) throw FormatError(K::kTruncated, origin + ": truncated MMF1 header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError(K::kBadMagic, origin + ": not an MMF1 file (bad magic)");
  }
  if (bytes.size() < 8) throw FormatError(K::kTruncated, origin + ": truncated MMF1 header");
  if (bytes[4] != kDtypeF32) {
    throw FormatError(K::kMalformed, origin + ": unsupported dtype " + std::to_string(bytes[4]));
  }
  const std::size_t ndim = bytes[5];
  if (ndim != 2) {
    throw FormatError(K::kMalformed, origin + ": feature tracks must be 2-D, got ndim=" + std::to_string(ndim));
  }
  const std::size_t header = 8 + 4 * ndim;
  if (bytes.size() < header) throw FormatError(K::kTruncated, origin + ": truncated MMF1 dims");
  const std::size_t rows = get_u32(&bytes[8]);
  const std::size_t dims = get_u32(&bytes[12]);
  if (rows == 0 || dims == 0) throw FormatError(K::kMalformed, origin + ": zero-sized dimension");
  const std::size_t expected = header + 4 * rows * dims + 4;
  if (bytes.size() < expected) {
    throw FormatError(K::kTruncated, origin + ": truncated MMF1 payload (" + std::to_string(bytes.size()) +
                                         " of " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw FormatError(K::kMalformed, origin + ": trailing bytes after MMF1 checksum");
  const std::uint32_t stored = get_u32(&bytes[expected - 4]);
  if (stored != crc32_of(bytes.data(), expected - 4)) {
    throw FormatError(K::kChecksum, origin + ": MMF1 checksum mismatch");
  }

  FeatureTrack t;
  t.rows = rows;
  t.dims = dims;
  t.values.resize(rows * dims);
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    t.values[i] = std::bit_cast<float>(get_u32(&bytes[header + 4 * i]));
  }
  if (tag) {
    t.modality = *tag;
  } else if (dims == kVideoFeatureDim) {
    t.modality = Modality::kVideo;
  } else if (dims == kAudioFeatureDim) {
    t.modality = Modality::kAudio;
  } else {
    throw DataError(origin + ": cannot infer modality of a " + std::to_string(dims) +
                    "-dim track; store it under features/video or features/audio");
  }
  return t;
}

void write_features(const std::filesystem::path& path, const FeatureTrack& track) {
  const auto bytes = encode_features(track);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

FeatureTrack read_features(const std::filesystem::path& path) {
  std::optional<Modality> tag;
  const std::string parent = path.parent_path().filename().string();
  if (parent == "video" || parent == "audio") tag = parse_modality(parent);
  return decode_features(read_bytes(path), tag, path.string());
}

FeatureTrack resample_track(const FeatureTrack& track, std::size_t target_rows) {
  if (target_rows < 1) throw DataError("resample_track: target row count must be >= 1");
  if (track.rows < 1) throw DataError("resample_track: empty track");
  if (track.rows == target_rows) return track;
  FeatureTrack out = track;
  out.rows = target_rows;
  out.values.resize(target_rows * track.dims);
  for (std::size_t i = 0; i < target_rows; ++i) {
    const std::size_t src = i * track.rows / target_rows;
    std::copy_n(track.values.begin() + src * track.dims, track.dims, out.values.begin() + i * track.dims);
  }
  return out;
}

FeatureTrack zero_track(Modality modality, std::size_t dims) {
  FeatureTrack t;
  t.modality = modality;
  t.rows = 1;
  t.dims = dims;
  t.values.assign(dims, 0.0f);
  t.synthetic_fill = true;
  return t;
}

std::filesystem::path FeatureStore::path(Modality m, const std::string& video_id) const {
  return root_ / "features" / modality_name(m) / (video_id + ".mmf1");
}

bool FeatureStore::has(Modality m, const std::string& video_id) const {
  return std::filesystem::exists(path(m, video_id));
}

FeatureTrack FeatureStore::load(Modality m, const std::string& video_id) const {
  const auto p = path(m, video_id);
  if (!std::filesystem::exists(p)) throw DataError("missing " + modality_name(m) + " features: " + p.string());
  FeatureTrack t = read_features(p);
  t.modality = m;
  return t;
}

void FeatureStore::save(const std::string& video_id, const FeatureTrack& track) const {
  write_features(path(track.modality, video_id), track);
}

}  // namespace fh
