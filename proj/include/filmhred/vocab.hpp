// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fh {

/// Lowercases, splits every ASCII punctuation character into its own token
/// and splits on whitespace. Used for model inputs and metric scoring alike.
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(std::span<const std::string> tokens);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  /// Reserved tokens only.
  Vocabulary();

  /// Rebuilds from a full id-ordered token list (reserved tokens first).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  /// Id of token, or kUnk.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Appends a new token; returns its id (existing id if already present).
  int add(const std::string& token);

  std::vector<int> encode(std::span<const std::string> tokens, bool append_eos = true) const;
  /// Tokenizes text then encodes it.
  std::vector<int> encode_text(std::string_view text, bool append_eos = true) const;
  /// Space-joined tokens, stopping before the first <eos>.
  std::string decode(std::span<const int> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Counts over texts; tokens with count >= min_count get ids ordered by
/// (count desc, token asc) after the reserved ones.
Vocabulary build_vocab_from_texts(std::span<const std::string> texts, std::size_t min_count = 2);

}  // namespace fh
