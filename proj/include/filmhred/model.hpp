// SPDX-License-Identifier: Apache-2.0
//
// The full hierarchical model: encoders, context fusion, answer decoder and
// the optional auxiliary decoder driven by the video encoder state.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "filmhred/encoders.hpp"

namespace fh {

struct ModelConfig {
  std::size_t embed_dim = 300;
  std::size_t hidden = 256;            // utterance, dialogue, description and decoder LSTMs
  std::size_t modality_hidden = 0;     // video/audio LSTMs; 0 means hidden
  std::size_t attention_dim = 0;       // 0 means hidden
  EncoderConfig encoder;
  bool use_video = true;
  bool use_audio = true;
  DescriptionSource description = DescriptionSource::kCaption;
  bool use_aux = true;
  double aux_weight = 1.0;  // λ
  double retain = 0.8;      // dropout keep probability
  double sampler_threshold = 0.2;

  std::size_t resolved_modality_hidden() const { return modality_hidden ? modality_hidden : hidden; }
  std::size_t resolved_attention_dim() const { return attention_dim ? attention_dim : hidden; }
  void validate() const;
};

/// Chooses the decoder input for the next step: the ground-truth token when
/// s > threshold, otherwise a token drawn from the previous step's softmax.
class ScheduledSampler {
 public:
  static constexpr double kDefaultThreshold = 0.2;

  explicit ScheduledSampler(double threshold = kDefaultThreshold, std::uint64_t seed = 0);

  /// Replaces the U(0,1) source of s.
  void set_draw(std::function<double()> draw) { draw_ = std::move(draw); }
  /// Subsequent calls return these inputs in order, ignoring s and the rng.
  void replay(std::vector<int> inputs);
  void clear_trace() { trace_.clear(); }
  const std::vector<int>& trace() const { return trace_; }
  double threshold() const { return threshold_; }

  int next_input(int teacher_token, std::span<const double> log_probs);

 private:
  double threshold_;
  Rng rng_;
  std::function<double()> draw_;
  std::vector<int> trace_;
  std::vector<int> replay_;
  std::size_t replay_pos_ = 0;
  bool replaying_ = false;
};

/// Conditional LSTM decoder. The context initialises the state through a
/// tanh projection and is concatenated to the word embedding at every step.
class Decoder {
 public:
  struct State {
    LstmState lstm;
    Var context;
  };

  Decoder() = default;
  static Decoder create(ParameterStore& store, const std::string& name, const Embedding& embedding,
                        std::size_t context_dim, std::size_t hidden, Rng& rng);

  std::size_t vocab_size() const { return embedding_.vocab_size(); }
  std::size_t context_dim() const { return init_.in_features(); }
  const Linear& output() const { return out_; }

  State start(const Var& context) const;
  /// Advances one step on `input_token`; returns log-probabilities [V].
  Var step(State& state, int input_token, const RunContext& rc) const;

 private:
  Embedding embedding_;
  Linear init_;
  Lstm lstm_;
  Linear out_;
};

/// −(1/M)·Σ log p(target_m); inputs follow the sampler, or pure teacher
/// forcing when sampler is null. target must be non-empty.
Var decoder_loss(const Decoder& decoder, const Var& context, std::span<const int> target,
                 ScheduledSampler* sampler, const RunContext& rc);

/// A dialogue converted to ids and feature tensors for one model config.
struct DialogueExample {
  std::string video_id;
  std::vector<std::vector<int>> questions;  // each <eos>-terminated
  std::vector<std::vector<int>> answers;
  std::vector<int> description;  // empty when the source is none
  std::optional<Tensor> video;
  std::optional<Tensor> audio;
  bool audio_filled = false;  // zero frame substituted for a missing track

  std::size_t turns() const { return questions.size(); }
};

class Model {
 public:
  Model(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  const UtteranceEncoder& utterance() const { return utterance_; }
  const DialogueStateEncoder& dialogue() const { return dialogue_; }
  const DescriptionEncoder* description() const { return description_ ? &*description_ : nullptr; }
  const ModalityEncoder* video() const { return video_ ? &*video_ : nullptr; }
  const ModalityEncoder* audio() const { return audio_ ? &*audio_ : nullptr; }
  const Decoder& answer_decoder() const { return answer_decoder_; }
  const Decoder* aux_decoder() const { return aux_decoder_ ? &*aux_decoder_ : nullptr; }
  const Linear& fusion() const { return fusion_; }

  /// Copies pretrained vectors into the shared embedding table.
  void set_embeddings(const Tensor& table);

  /// C = W·concat(state, desc?, video?, audio?) + b. The parts must
  /// match the active-modality config.
  Var fuse_context(const Var& dialogue_state, const Var* description, const Var* video,
                   const Var* audio) const;

 private:
  ModelConfig cfg_;
  std::size_t vocab_size_;
  ParameterStore store_;
  Embedding embedding_;
  UtteranceEncoder utterance_;
  DialogueStateEncoder dialogue_;
  std::optional<DescriptionEncoder> description_;
  std::optional<ModalityEncoder> video_;
  std::optional<ModalityEncoder> audio_;
  Linear fusion_;
  Decoder answer_decoder_;
  std::optional<Decoder> aux_decoder_;
};

/// Number of FiLM scalars in a model (video and audio stacks).
std::size_t film_parameter_count(const Model& model);

struct TurnContext {
  Var context;             // C_t
  Var question;            // final utterance state of the question
  Var video_final_h;       // invalid without video
  Tensor video_weights;
  Tensor audio_weights;
  Tensor description_weights;
};

/// Walks one dialogue on one tape. Each question and each answer is a
/// separate dialogue-LSTM step, so asking question t (0-based) after folding
/// t answers takes 2t+1 updates in total.
class DialogueTracker {
 public:
  DialogueTracker(const Model& model, Tape& tape, const DialogueExample& example, const RunContext& rc);

  TurnContext ask(std::span<const int> question);
  void answer(std::span<const int> answer);

  std::size_t utterance_count() const { return utterances_; }
  const LstmState& state() const { return state_; }

 private:
  const Model& model_;
  Tape& tape_;
  RunContext rc_;
  LstmState state_;
  std::size_t utterances_ = 0;
  std::optional<AttentionKeys> description_keys_;
  std::optional<ModalityEncoder::Prepared> video_;
  std::optional<ModalityEncoder::Prepared> audio_;
};

struct TurnLoss {
  Var answer;
  Var aux;    // invalid when the auxiliary decoder is disabled
  Var total;  // answer + λ·aux, or answer alone
};

struct Samplers {
  ScheduledSampler* answer = nullptr;
  ScheduledSampler* aux = nullptr;
};

/// Losses for every turn of a dialogue, folding ground-truth answers into the
/// history after each turn.
std::vector<TurnLoss> forward_dialogue(const Model& model, Tape& tape, const DialogueExample& example,
                                       const RunContext& rc, Samplers samplers = {});

/// Losses for turn t (0-based) only; turns before t are folded in first.
TurnLoss forward_turn(const Model& model, Tape& tape, const DialogueExample& example, std::size_t t,
                      const RunContext& rc, Samplers samplers = {});

/// Mean of the per-turn total losses.
Var dialogue_loss(const Model& model, Tape& tape, const DialogueExample& example, const RunContext& rc,
                  Samplers samplers = {});

}  // namespace fh
