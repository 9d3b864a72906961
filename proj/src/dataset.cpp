// SPDX-License-Identifier: Apache-2.0

#include "filmhred/dataset.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "filmhred/errors.hpp"

namespace fh {

using nlohmann::json;

const std::vector<Dialogue>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw DataError("dataset has no split named '" + name + "'");
  return it->second;
}

namespace {

std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

[[noreturn]] void schema_fail(const std::string& origin, const std::string& pointer,
                              const std::string& what) {
  throw DataError(origin + ": " + (pointer.empty() ? "/" : pointer) + ": " + what);
}

std::string require_string(const json& obj, const std::string& key, const std::string& origin,
                           const std::string& pointer) {
  auto it = obj.find(key);
  if (it == obj.end()) schema_fail(origin, pointer, "missing required key '" + key + "'");
  if (!it->is_string()) schema_fail(origin, pointer + "/" + key, "expected a string");
  return it->get<std::string>();
}

}  // namespace

std::vector<Dialogue> parse_split(const std::string& json_text, const std::string& origin,
                                  std::vector<std::string>* warnings) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(origin + ": line " + std::to_string(line_of(json_text, e.byte)) +
                    ": malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_object()) schema_fail(origin, "", "expected an object");
  auto dl = doc.find("dialogs");
  if (dl == doc.end()) schema_fail(origin, "", "missing required key 'dialogs'");
  if (!dl->is_array()) schema_fail(origin, "/dialogs", "expected an array");
  if (dl->empty()) schema_fail(origin, "/dialogs", "dialogue list is empty");

  std::vector<Dialogue> out;
  out.reserve(dl->size());
  std::size_t odd_turns = 0;
  std::string first_odd;
  for (std::size_t i = 0; i < dl->size(); ++i) {
    const json& d = (*dl)[i];
    const std::string ptr = "/dialogs/" + std::to_string(i);
    if (!d.is_object()) schema_fail(origin, ptr, "expected an object");
    Dialogue dialogue;
    if (d.contains("video_id")) {
      dialogue.video_id = require_string(d, "video_id", origin, ptr);
    } else if (d.contains("image_id")) {
      dialogue.video_id = require_string(d, "image_id", origin, ptr);
    } else {
      schema_fail(origin, ptr, "missing required key 'video_id'");
    }
    if (dialogue.video_id.empty()) schema_fail(origin, ptr + "/video_id", "empty video id");
    dialogue.caption = require_string(d, "caption", origin, ptr);
    if (auto s = d.find("summary"); s != d.end() && !s->is_null()) {
      if (!s->is_string()) schema_fail(origin, ptr + "/summary", "expected a string");
      dialogue.summary = s->get<std::string>();
    }
    auto turns = d.find("dialog");
    if (turns == d.end()) schema_fail(origin, ptr, "missing required key 'dialog'");
    if (!turns->is_array()) schema_fail(origin, ptr + "/dialog", "expected an array");
    if (turns->empty()) schema_fail(origin, ptr + "/dialog", "dialogue has no turns");
    for (std::size_t t = 0; t < turns->size(); ++t) {
      const json& turn = (*turns)[t];
      const std::string tptr = ptr + "/dialog/" + std::to_string(t);
      if (!turn.is_object()) schema_fail(origin, tptr, "expected an object");
      dialogue.turns.push_back(
          {require_string(turn, "question", origin, tptr), require_string(turn, "answer", origin, tptr)});
    }
    if (dialogue.turns.size() != kOfficialTurns) {
      if (odd_turns++ == 0) first_odd = ptr + " has " + std::to_string(dialogue.turns.size());
    }
    out.push_back(std::move(dialogue));
  }
  if (warnings && odd_turns > 0) {
    warnings->push_back(origin + ": " + std::to_string(odd_turns) + " dialogue(s) with a turn count other than " +
                        std::to_string(kOfficialTurns) + " (first: " + first_odd + ")");
  }
  return out;
}

std::vector<Dialogue> load_split(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_split(ss.str(), path.string(), warnings);
}

std::string serialize_split(const std::vector<Dialogue>& dialogues) {
  json arr = json::array();
  for (const auto& d : dialogues) {
    json turns = json::array();
    for (const auto& t : d.turns) turns.push_back({{"question", t.question}, {"answer", t.answer}});
    json obj = {{"video_id", d.video_id}, {"caption", d.caption}, {"dialog", turns}};
    if (d.summary) obj["summary"] = *d.summary;
    arr.push_back(std::move(obj));
  }
  return json{{"dialogs", arr}}.dump(1) + "\n";
}

void save_split(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  out << serialize_split(dialogues);
  if (!out) throw DataError("failed writing dataset file " + path.string());
}

Dataset load_dataset(const std::filesystem::path& dir, std::vector<std::string>* warnings) {
  Dataset ds;
  for (const char* name : {"train", "valid", "test"}) {
    const auto p = dir / (std::string(name) + ".json");
    if (std::filesystem::exists(p)) ds.splits.emplace(name, load_split(p, warnings));
  }
  if (ds.splits.empty()) {
    throw DataError("no train.json/valid.json/test.json found under " + dir.string());
  }
  return ds;
}

Vocabulary build_vocab(const std::vector<Dialogue>& dialogues, std::size_t min_count) {
  std::vector<std::string> texts;
  for (const auto& d : dialogues) {
    texts.push_back(d.caption);
    if (d.summary) texts.push_back(*d.summary);
    for (const auto& t : d.turns) {
      texts.push_back(t.question);
      texts.push_back(t.answer);
    }
  }
  return build_vocab_from_texts(texts, min_count);
}

}  // namespace fh
