// SPDX-License-Identifier: Apache-2.0
//
// Encoder stacks: utterance, dialogue-level, description, and the video and
// audio encoders with time-extended FiLM conditioning on the current question.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "filmhred/features.hpp"
#include "filmhred/layers.hpp"

namespace fh {

enum class DescriptionSource { kCaption, kSummary, kBoth, kNone };

std::string to_string(DescriptionSource s);
DescriptionSource parse_description_source(const std::string& s);

struct EncoderConfig {
  std::size_t segments = 30;  // L: video rows on the FiLM path
  std::size_t film_blocks = 2;  // N
  std::size_t film_hidden = 256;
  std::size_t fc_dim = 0;  // width of the layer after the last block; 0 means film_hidden
  bool use_film = true;
  std::size_t video_dim = kVideoFeatureDim;
  std::size_t audio_dim = kAudioFeatureDim;

  std::size_t resolved_fc_dim() const { return fc_dim ? fc_dim : film_hidden; }
  void validate() const;
};

class UtteranceEncoder {
 public:
  struct Result {
    Var final_h;  // state at the <eos> step
    LstmSequence sequence;
  };

  UtteranceEncoder() = default;
  UtteranceEncoder(Embedding embedding, Lstm lstm) : embedding_(embedding), lstm_(lstm) {}

  /// tokens must be non-empty, <eos>-terminated and inside the vocabulary.
  Result encode(Tape& tape, std::span<const int> tokens, const RunContext& rc) const;

  const Lstm& lstm() const { return lstm_; }

 private:
  Embedding embedding_;
  Lstm lstm_;
};

/// Dialogue-level LSTM over utterance encodings, one step per utterance.
class DialogueStateEncoder {
 public:
  DialogueStateEncoder() = default;
  explicit DialogueStateEncoder(Lstm lstm) : lstm_(lstm) {}

  LstmState initial(Tape& tape) const { return lstm_.zero_state(tape); }
  LstmState update(const LstmState& state, const Var& utterance_encoding) const {
    return lstm_.step(utterance_encoding, state);
  }
  const Lstm& lstm() const { return lstm_; }

 private:
  Lstm lstm_;
};

class DescriptionEncoder {
 public:
  DescriptionEncoder() = default;
  DescriptionEncoder(Embedding embedding, Lstm lstm, AdditiveAttention attention)
      : embedding_(embedding), lstm_(lstm), attention_(attention) {}

  /// Runs the LSTM over the description once; attention can then be
  /// evaluated for any number of questions.
  AttentionKeys prepare(Tape& tape, std::span<const int> tokens, const RunContext& rc) const;
  AttentionResult attend(const Var& question, const AttentionKeys& keys) const {
    return attention_.attend(question, keys);
  }
  AttentionResult encode(Tape& tape, std::span<const int> tokens, const Var& question,
                         const RunContext& rc) const {
    return attend(question, prepare(tape, tokens, rc));
  }

 private:
  Embedding embedding_;
  Lstm lstm_;
  AdditiveAttention attention_;
};

/// γ⊙h + β, with γ and β broadcast over the rows (time steps) of h.
Var film_affine(const Var& h, const Var& gamma, const Var& beta);

/// One FiLM block: h = relu(W·x); (γ, β) = split(C·q + c);
/// y = relu(γ⊙h + β) + x. The same (γ, β) applies to every time step.
struct FilmBlock {
  Linear pre;   // film_hidden -> film_hidden
  Linear cond;  // question_dim -> 2 * film_hidden

  static FilmBlock create(ParameterStore& store, const std::string& name, std::size_t width,
                          std::size_t question_dim, Rng& rng);

  std::size_t width() const { return pre.out_features(); }
  std::pair<Var, Var> modulation(const Var& question) const;
  Var operator()(const Var& features, const Var& question) const;
};

struct ModalityEncoding {
  Var attended;          // attention-weighted sum of LSTM states
  LstmState final;       // LSTM state after the last row
  Tensor weights;        // attention weights over rows
};

/// Video or audio encoder. With FiLM: stem (relu linear to film_hidden) ->
/// N FiLM blocks -> relu fully connected -> LSTM -> attention. Without FiLM
/// the raw features feed the LSTM directly and no FiLM parameters exist.
class ModalityEncoder {
 public:
  /// Question-independent work for one track, shareable across turns.
  struct Prepared {
    Var features;
    Var stem;                      // FiLM path only
    std::optional<AttentionKeys> keys;  // no-FiLM path only
    LstmState final;                    // no-FiLM path only
  };

  ModalityEncoder() = default;
  static ModalityEncoder create(ParameterStore& store, const std::string& name, Modality modality,
                                const EncoderConfig& cfg, std::size_t question_dim,
                                std::size_t hidden, std::size_t attention_dim, Rng& rng);

  Modality modality() const { return modality_; }
  bool uses_film() const { return stem_.has_value(); }
  std::size_t feature_dim() const { return feature_dim_; }
  /// Row count required on the FiLM path (0 = any).
  std::size_t required_rows() const { return required_rows_; }
  const std::vector<FilmBlock>& blocks() const { return blocks_; }
  const Lstm& lstm() const { return lstm_; }

  Prepared prepare(Tape& tape, const Tensor& track) const;
  /// FiLM-conditioned rows fed to the LSTM, [T, fc_dim]. FiLM path only.
  Var conditioned_features(const Prepared& prepared, const Var& question) const;
  ModalityEncoding encode(const Prepared& prepared, const Var& question) const;
  ModalityEncoding encode(Tape& tape, const Tensor& track, const Var& question) const {
    return encode(prepare(tape, track), question);
  }

 private:
  Modality modality_ = Modality::kVideo;
  std::size_t feature_dim_ = 0;
  std::size_t required_rows_ = 0;
  std::optional<Linear> stem_;
  std::vector<FilmBlock> blocks_;
  std::optional<Linear> fc_;
  Lstm lstm_;
  AdditiveAttention attention_;
};

}  // namespace fh
