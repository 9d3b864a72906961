// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale synthetic dialogues. Each question names a topic; each topic is
// tied to one video feature channel. The answer is
//
//   (yes | no) <topic> in video
//
// with "yes" exactly when that channel's mean over the video track is
// positive, so answers depend jointly on the question and the track. The
// caption reveals the polarity of the first half of the topics only.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "filmhred/dataset.hpp"
#include "filmhred/features.hpp"

namespace fh {

struct SynthOptions {
  std::uint64_t seed = 1;
  std::size_t dialogues = 64;   // training split size
  std::size_t valid = 0;        // 0: max(2, dialogues / 4)
  std::size_t test = 0;         // 0: max(2, dialogues / 4)
  std::size_t vocab_size = 50;  // distinct words in the generated language, >= 10
  std::size_t turns = 3;
  std::size_t video_rows = 30;
  std::size_t video_dim = kVideoFeatureDim;
  std::size_t audio_rows = 10;
  std::size_t audio_dim = kAudioFeatureDim;
};

struct SynthLexicon {
  std::vector<std::string> topics;       // topic i reads video channel i
  std::vector<std::string> distractors;  // filler for questions and descriptions
};

struct SynthData {
  Dataset dataset;  // splits "train", "valid", "test"
  std::map<std::string, FeatureTrack> video;
  std::map<std::string, FeatureTrack> audio;
  SynthLexicon lexicon;
};

SynthLexicon synth_lexicon(std::size_t vocab_size, std::size_t video_dim);

/// The answer rule: polarity of channel `topic` in `video`, then the topic.
std::string synth_answer(const SynthLexicon& lexicon, std::size_t topic, const FeatureTrack& video);

SynthData synthesize_dataset(const SynthOptions& options);

/// Writes train/valid/test.json and features/<modality>/<id>.mmf1 under dir.
void write_synth_data(const std::filesystem::path& dir, const SynthData& data);

}  // namespace fh
