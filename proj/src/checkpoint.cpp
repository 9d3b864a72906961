// SPDX-License-Identifier: Apache-2.0

#include "filmhred/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "filmhred/errors.hpp"
#include "filmhred/features.hpp"

namespace fh {

namespace {

using json = nlohmann::json;
using K = FormatError::Kind;

constexpr char kMagic[4] = {'F', 'H', 'C', 'K'};
constexpr std::size_t kHeader = 4 + 4 + 8;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

json tensor_entries(const std::vector<std::pair<std::string, Tensor>>& tensors, std::uint64_t& offset) {
  json arr = json::array();
  for (const auto& [name, t] : tensors) {
    arr.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  return arr;
}

std::vector<std::pair<std::string, Tensor>> read_entries(const json& arr, const std::uint8_t* blobs,
                                                         std::uint64_t blob_elems) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const json& e : arr) {
    const Shape shape = e.at("shape").get<Shape>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_numel(shape);
    if (offset + n > blob_elems) throw FormatError(K::kMalformed, "tensor " + e.at("name").get<std::string>() + " exceeds blob section");
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<double>(get_le<std::uint64_t>(blobs + 8 * (offset + i)));
    out.emplace_back(e.at("name").get<std::string>(), Tensor(shape, std::move(data)));
  }
  return out;
}

std::uint64_t blob_elements(const json& manifest) {
  std::uint64_t end = 0;
  for (const char* key : {"parameters", "optimizer"}) {
    for (const json& e : manifest.at(key)) {
      end = std::max<std::uint64_t>(end, e.at("offset").get<std::uint64_t>() + shape_numel(e.at("shape").get<Shape>()));
    }
  }
  return end;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::uint64_t offset = 0;
  json manifest;
  manifest["parameters"] = tensor_entries(ckpt.parameters, offset);
  manifest["optimizer"] = tensor_entries(ckpt.optimizer, offset);
  manifest["optimizer_steps"] = ckpt.optimizer_steps;
  manifest["config"] = ckpt.config;
  manifest["vocabulary"] = ckpt.vocabulary;
  manifest["best_bleu4"] = ckpt.best_bleu4;
  manifest["best_epoch"] = ckpt.best_epoch;
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + 8 * offset + 4);
  for (const auto* group : {&ckpt.parameters, &ckpt.optimizer}) {
    for (const auto& [name, t] : *group) {
      for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  put_le<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4) throw FormatError(K::kTruncated, origin + ": truncated checkpoint header");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError(K::kBadMagic, origin + ": not a checkpoint file (bad magic)");
  }
  if (bytes.size() < kHeader) throw FormatError(K::kTruncated, origin + ": truncated checkpoint header");
  const auto version = get_le<std::uint32_t>(&bytes[4]);
  if (version != Checkpoint::kVersion) {
    throw FormatError(K::kVersionMismatch, origin + ": checkpoint version " + std::to_string(version) +
                                               ", this build reads version " + std::to_string(Checkpoint::kVersion));
  }
  auto crc_ok = [&] {
    return bytes.size() >= kHeader + 4 &&
           get_le<std::uint32_t>(&bytes[bytes.size() - 4]) == crc32_of(bytes.data(), bytes.size() - 4);
  };
  const auto manifest_len = get_le<std::uint64_t>(&bytes[8]);
  if (manifest_len > bytes.size() - kHeader) {
    throw FormatError(K::kTruncated, origin + ": truncated checkpoint manifest");
  }
  json manifest;
  std::uint64_t blob_elems = 0;
  try {
    manifest = json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<std::ptrdiff_t>(kHeader + manifest_len));
    blob_elems = blob_elements(manifest);
  } catch (const json::exception& e) {
    if (!crc_ok()) throw FormatError(K::kChecksum, origin + ": checkpoint checksum mismatch");
    throw FormatError(K::kMalformed, origin + ": malformed checkpoint manifest: " + e.what());
  }
  const std::uint64_t expected = kHeader + manifest_len + 8 * blob_elems + 4;
  if (bytes.size() < expected) {
    throw FormatError(K::kTruncated, origin + ": truncated checkpoint (" + std::to_string(bytes.size()) + " of " +
                                         std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    if (!crc_ok()) throw FormatError(K::kChecksum, origin + ": checkpoint checksum mismatch");
    throw FormatError(K::kMalformed, origin + ": trailing bytes after checkpoint checksum");
  }
  if (!crc_ok()) throw FormatError(K::kChecksum, origin + ": checkpoint checksum mismatch");

  Checkpoint c;
  try {
    const std::uint8_t* blobs = bytes.data() + kHeader + manifest_len;
    c.parameters = read_entries(manifest.at("parameters"), blobs, blob_elems);
    c.optimizer = read_entries(manifest.at("optimizer"), blobs, blob_elems);
    c.optimizer_steps = manifest.at("optimizer_steps").get<std::uint64_t>();
    c.config = manifest.at("config").get<std::string>();
    c.vocabulary = manifest.at("vocabulary").get<std::vector<std::string>>();
    c.best_bleu4 = manifest.at("best_bleu4").get<double>();
    c.best_epoch = manifest.at("best_epoch").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(K::kMalformed, origin + ": malformed checkpoint manifest: " + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes, path.string());
}

}  // namespace fh
