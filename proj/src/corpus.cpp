// SPDX-License-Identifier: Apache-2.0

#include "filmhred/corpus.hpp"

#include "filmhred/errors.hpp"

namespace fh {

std::vector<int> description_ids(const Dialogue& dialogue, DescriptionSource source, const Vocabulary& vocab) {
  auto summary = [&]() {
    if (!dialogue.summary || dialogue.summary->empty()) {
      throw DataError("dialogue " + dialogue.video_id + ": summary requested but not present");
    }
    return vocab.encode_text(*dialogue.summary);
  };
  switch (source) {
    case DescriptionSource::kNone: return {};
    case DescriptionSource::kCaption: return vocab.encode_text(dialogue.caption);
    case DescriptionSource::kSummary: return summary();
    case DescriptionSource::kBoth: {
      std::vector<int> ids = vocab.encode_text(dialogue.caption);
      const std::vector<int> s = summary();
      ids.insert(ids.end(), s.begin(), s.end());
      return ids;
    }
  }
  return {};
}

DialogueExample make_example(const Dialogue& dialogue, const Vocabulary& vocab, const ModelConfig& cfg,
                             const FeatureStore* features) {
  DialogueExample ex;
  ex.video_id = dialogue.video_id;
  for (const QaTurn& t : dialogue.turns) {
    ex.questions.push_back(vocab.encode_text(t.question));
    ex.answers.push_back(vocab.encode_text(t.answer));
  }
  ex.description = description_ids(dialogue, cfg.description, vocab);
  if ((cfg.use_video || cfg.use_audio) && !features) {
    throw DataError("dialogue " + dialogue.video_id + ": model uses features but no feature store was given");
  }
  if (cfg.use_video) {
    FeatureTrack v = features->load(Modality::kVideo, dialogue.video_id);
    if (cfg.encoder.use_film) v = resample_track(v, cfg.encoder.segments);
    ex.video = v.to_tensor();
  }
  if (cfg.use_audio) {
    FeatureTrack a = features->has(Modality::kAudio, dialogue.video_id)
                         ? features->load(Modality::kAudio, dialogue.video_id)
                         : zero_track(Modality::kAudio, cfg.encoder.audio_dim);
    ex.audio_filled = a.synthetic_fill;
    ex.audio = a.to_tensor();
  }
  return ex;
}

std::vector<DialogueExample> make_examples(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                           const ModelConfig& cfg, const FeatureStore* features) {
  std::vector<DialogueExample> out;
  out.reserve(dialogues.size());
  for (const Dialogue& d : dialogues) out.push_back(make_example(d, vocab, cfg, features));
  return out;
}

}  // namespace fh
