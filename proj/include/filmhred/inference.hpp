// SPDX-License-Identifier: Apache-2.0
//
// Answer generation. Decoding stops at <eos> or after kMaxAnswerTokens
// tokens (the <eos> counts towards the cap).

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "filmhred/model.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

inline constexpr std::size_t kMaxAnswerTokens = 30;
inline constexpr std::size_t kDefaultBeamWidth = 5;

struct DecodeOptions {
  std::size_t max_len = kMaxAnswerTokens;
  bool suppress_unk = false;
};

struct Hypothesis {
  std::vector<int> tokens;  // includes the closing <eos> when present
  double log_prob = 0.0;
  bool finished = false;

  /// Tokens without the trailing <eos>.
  std::vector<int> answer() const;
};

/// Argmax at every step, lowest id on ties.
Hypothesis greedy_decode(const Decoder& decoder, const Tensor& context, const DecodeOptions& opts = {});

struct BeamResult {
  Hypothesis best;
  std::vector<Hypothesis> top;  // best first
};

/// Standard beam search over summed log-probabilities without length
/// normalisation. Finished hypotheses stay in the beam and compete with
/// live ones for its k slots. Ranking: higher score first, then the
/// lexicographically smaller token sequence.
BeamResult beam_search(const Decoder& decoder, const Tensor& context, std::size_t beam_width,
                       const DecodeOptions& opts = {});

/// Answers for every turn of a dialogue, folding the ground-truth answers
/// into the history (beam_width 0 selects greedy decoding).
std::vector<std::vector<int>> decode_dialogue(const Model& model, const DialogueExample& example,
                                              std::size_t beam_width, const DecodeOptions& opts = {});

}  // namespace fh
