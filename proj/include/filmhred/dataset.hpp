// SPDX-License-Identifier: Apache-2.0
//
// Dialogue dataset schema. One JSON document per split:
//
//   {"dialogs": [{"video_id": "...", "caption": "...", "summary": "...",
//                 "dialog": [{"question": "...", "answer": "..."}, ...]}, ...]}
//
// "image_id" is accepted as an alias of "video_id" so the challenge's own
// files load without conversion. "summary" is optional.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "filmhred/vocab.hpp"

namespace fh {

struct QaTurn {
  std::string question;
  std::string answer;

  friend bool operator==(const QaTurn&, const QaTurn&) = default;
};

struct Dialogue {
  std::string video_id;
  std::string caption;
  std::optional<std::string> summary;
  std::vector<QaTurn> turns;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

/// Turn count of the official collection protocol.
inline constexpr std::size_t kOfficialTurns = 10;

struct Dataset {
  std::map<std::string, std::vector<Dialogue>> splits;

  const std::vector<Dialogue>& split(const std::string& name) const;
  bool has(const std::string& name) const { return splits.count(name) > 0; }
};

/// Parses one split document. Throws DataError carrying a line number for
/// syntax errors and a JSON pointer (e.g. /dialogs/3/dialog/0/answer) for
/// schema violations. Warnings (e.g. turn counts other than 10) are appended
/// to `warnings` when given.
std::vector<Dialogue> parse_split(const std::string& json_text, const std::string& origin = "<memory>",
                                  std::vector<std::string>* warnings = nullptr);
std::vector<Dialogue> load_split(const std::filesystem::path& path,
                                 std::vector<std::string>* warnings = nullptr);

std::string serialize_split(const std::vector<Dialogue>& dialogues);
void save_split(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

/// Loads every `<name>.json` for name in {train, valid, test} under dir.
/// At least one split must exist.
Dataset load_dataset(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

/// Vocabulary over questions, answers, captions and summaries.
Vocabulary build_vocab(const std::vector<Dialogue>& dialogues, std::size_t min_count = 2);

}  // namespace fh
