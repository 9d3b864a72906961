// SPDX-License-Identifier: Apache-2.0

#include "filmhred/synth.hpp"

#include <algorithm>
#include <cstdio>

#include "filmhred/errors.hpp"

namespace fh {

namespace {

constexpr const char* kSyllables[] = {"ba", "ko", "mi", "te", "ru", "sa", "lo", "ne", "di", "pu"};
constexpr std::size_t kFixedWords = 5;  // yes no is in video

std::string pseudo_word(std::size_t i) {
  std::string w;
  std::size_t n = i;
  do {
    w = std::string(kSyllables[n % 10]) + w;
    n /= 10;
  } while (n > 0);
  if (i < 10) w = "ga" + w;
  return w;
}

float channel_mean(const FeatureTrack& t, std::size_t ch) {
  double s = 0.0;
  for (std::size_t r = 0; r < t.rows; ++r) s += t.at(r, ch);
  return static_cast<float>(s / static_cast<double>(t.rows));
}

}  // namespace

SynthLexicon synth_lexicon(std::size_t vocab_size, std::size_t video_dim) {
  if (vocab_size < 10) throw ConfigError("synthesize: vocab_size must be >= 10");
  SynthLexicon lex;
  const std::size_t free_words = vocab_size - kFixedWords;
  const std::size_t topics = std::min({std::max<std::size_t>(2, free_words / 3), std::size_t{8}, video_dim});
  for (std::size_t i = 0; i < free_words; ++i) {
    (i < topics ? lex.topics : lex.distractors).push_back(pseudo_word(i));
  }
  return lex;
}

std::string synth_answer(const SynthLexicon& lexicon, std::size_t topic, const FeatureTrack& video) {
  const bool positive = channel_mean(video, topic) > 0.0f;
  return std::string(positive ? "yes " : "no ") + lexicon.topics.at(topic) + " in video";
}

SynthData synthesize_dataset(const SynthOptions& o) {
  if (o.dialogues < 1 || o.turns < 1) throw ConfigError("synthesize: need at least one dialogue and one turn");
  if (o.video_rows < 1 || o.audio_rows < 1 || o.video_dim < 1 || o.audio_dim < 1) {
    throw ConfigError("synthesize: feature shapes must be positive");
  }
  SynthData data;
  data.lexicon = synth_lexicon(o.vocab_size, o.video_dim);
  const SynthLexicon& lex = data.lexicon;
  Rng rng(o.seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, 0.5f);
  auto pick = [&](const std::vector<std::string>& words) {
    return words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
  };

  const std::size_t extra = std::max<std::size_t>(2, o.dialogues / 4);
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", o.dialogues}, {"valid", o.valid ? o.valid : extra}, {"test", o.test ? o.test : extra}};
  std::size_t serial = 0;
  for (const auto& [split, count] : splits) {
    std::vector<Dialogue>& out = data.dataset.splits[split];
    for (std::size_t d = 0; d < count; ++d) {
      char id[32];
      std::snprintf(id, sizeof id, "synth%05zu", serial++);
      std::vector<int> sign(lex.topics.size());
      for (int& s : sign) s = unit(rng) < 0.5f ? -1 : 1;

      FeatureTrack video{Modality::kVideo, o.video_rows, o.video_dim, {}, false};
      video.values.resize(o.video_rows * o.video_dim);
      for (std::size_t r = 0; r < o.video_rows; ++r) {
        for (std::size_t c = 0; c < o.video_dim; ++c) {
          video.values[r * o.video_dim + c] =
              c < sign.size() ? static_cast<float>(sign[c]) * (0.5f + 0.5f * unit(rng)) : noise(rng);
        }
      }
      FeatureTrack audio{Modality::kAudio, o.audio_rows, o.audio_dim, {}, false};
      audio.values.resize(o.audio_rows * o.audio_dim);
      for (float& v : audio.values) v = noise(rng);

      Dialogue dlg;
      dlg.video_id = id;
      std::string caption = "video";
      for (std::size_t k = 0; k < (lex.topics.size() + 1) / 2; ++k) {
        caption += " " + lex.topics[k] + (sign[k] > 0 ? " yes" : " no");
      }
      dlg.caption = caption;
      std::string summary = caption;
      if (!lex.distractors.empty()) {
        for (int i = 0; i < 3; ++i) summary += " " + pick(lex.distractors);
      }
      dlg.summary = summary;
      for (std::size_t t = 0; t < o.turns; ++t) {
        const std::size_t topic = std::uniform_int_distribution<std::size_t>(0, lex.topics.size() - 1)(rng);
        std::string q = "is " + lex.topics[topic];
        if (!lex.distractors.empty()) q += " " + pick(lex.distractors) + " " + pick(lex.distractors);
        dlg.turns.push_back({q, synth_answer(lex, topic, video)});
      }
      out.push_back(std::move(dlg));
      data.video.emplace(id, std::move(video));
      data.audio.emplace(id, std::move(audio));
    }
  }
  return data;
}

void write_synth_data(const std::filesystem::path& dir, const SynthData& data) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, dialogues] : data.dataset.splits) save_split(dir / (name + ".json"), dialogues);
  const FeatureStore store(dir);
  for (const auto& [id, t] : data.video) store.save(id, t);
  for (const auto& [id, t] : data.audio) store.save(id, t);
}

}  // namespace fh
