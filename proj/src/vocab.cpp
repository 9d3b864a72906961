// SPDX-License-Identifier: Apache-2.0

#include "filmhred/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "filmhred/errors.hpp"

namespace fh {

namespace {
const char* const kReservedTokens[] = {"<pad>", "<sos>", "<eos>", "<unk>"};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (u < 128 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(u < 128 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

Vocabulary::Vocabulary() {
  for (const char* t : kReservedTokens) add(t);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved) throw DataError("vocabulary is missing reserved tokens");
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw DataError("vocabulary id " + std::to_string(i) + " must be " + kReservedTokens[i] +
                      ", found " + tokens[i]);
    }
  }
  Vocabulary v;
  for (std::size_t i = kReserved; i < tokens.size(); ++i) {
    if (tokens[i].empty() || v.contains(tokens[i])) {
      throw DataError("vocabulary has an empty or duplicate token at id " + std::to_string(i));
    }
    v.add(tokens[i]);
  }
  return v;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

int Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens, bool append_eos) const {
  std::vector<int> ids;
  ids.reserve(tokens.size() + 1);
  for (const auto& t : tokens) ids.push_back(id(t));
  if (append_eos) ids.push_back(kEos);
  return ids;
}

std::vector<int> Vocabulary::encode_text(std::string_view text, bool append_eos) const {
  const auto toks = tokenize(text);
  return encode(toks, append_eos);
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string s;
  for (int id : ids) {
    if (id == kEos) break;
    if (!s.empty()) s.push_back(' ');
    s += token(id);
  }
  return s;
}

Vocabulary build_vocab_from_texts(std::span<const std::string> texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& tok : tokenize(text)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : kept) {
    if (!v.contains(tok)) v.add(tok);
  }
  return v;
}

}  // namespace fh
