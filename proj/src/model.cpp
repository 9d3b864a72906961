// SPDX-License-Identifier: Apache-2.0

#include "filmhred/model.hpp"

#include <cmath>

#include "filmhred/errors.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

void ModelConfig::validate() const {
  encoder.validate();
  if (embed_dim < 1 || hidden < 1) throw ConfigError("embed_dim and hidden must be >= 1");
  if (!(retain > 0.0 && retain <= 1.0)) throw ConfigError("retain must lie in (0, 1]");
  if (!(aux_weight >= 0.0) || !std::isfinite(aux_weight)) throw ConfigError("aux_weight must be finite and >= 0");
  if (!(sampler_threshold >= 0.0 && sampler_threshold <= 1.0)) {
    throw ConfigError("sampler_threshold must lie in [0, 1]");
  }
  if (use_aux && description == DescriptionSource::kNone) {
    throw ConfigError("auxiliary decoding needs a description target (description=none)");
  }
  if (use_aux && !use_video) throw ConfigError("auxiliary decoding is driven by the video encoder (use_video=false)");
}

// ---------------------------------------------------------------------------

ScheduledSampler::ScheduledSampler(double threshold, std::uint64_t seed) : threshold_(threshold), rng_(seed) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("sampler threshold must lie in [0, 1]");
}

void ScheduledSampler::replay(std::vector<int> inputs) {
  replay_ = std::move(inputs);
  replay_pos_ = 0;
  replaying_ = true;
}

int ScheduledSampler::next_input(int teacher_token, std::span<const double> log_probs) {
  int chosen = teacher_token;
  if (replaying_) {
    if (replay_pos_ >= replay_.size()) throw Error("ScheduledSampler: replay exhausted");
    chosen = replay_[replay_pos_++];
  } else {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double s = draw_ ? draw_() : unit(rng_);
    if (!(s > threshold_)) {
      double total = 0.0;
      for (double lp : log_probs) total += std::exp(lp);
      const double u = unit(rng_) * total;
      double cum = 0.0;
      chosen = static_cast<int>(log_probs.size()) - 1;
      for (std::size_t i = 0; i < log_probs.size(); ++i) {
        cum += std::exp(log_probs[i]);
        if (u < cum) {
          chosen = static_cast<int>(i);
          break;
        }
      }
    }
  }
  trace_.push_back(chosen);
  return chosen;
}

// ---------------------------------------------------------------------------

Decoder Decoder::create(ParameterStore& store, const std::string& name, const Embedding& embedding,
                        std::size_t context_dim, std::size_t hidden, Rng& rng) {
  Decoder d;
  d.embedding_ = embedding;
  d.init_ = Linear::create(store, name + ".init", context_dim, hidden, rng);
  d.lstm_ = Lstm::create(store, name + ".lstm", embedding.dim() + context_dim, hidden, rng);
  d.out_ = Linear::create(store, name + ".output", hidden, embedding.vocab_size(), rng);
  return d;
}

Decoder::State Decoder::start(const Var& context) const {
  if (context.shape() != Shape{context_dim()}) {
    throw ShapeError("decoder: context " + shape_str(context.shape()) + " but decoder expects [" +
                     std::to_string(context_dim()) + "]");
  }
  State s;
  s.context = context;
  s.lstm.h = tanh(init_(context));
  s.lstm.c = context.tape()->constant(Tensor(Shape{lstm_.hidden_size()}));
  return s;
}

Var Decoder::step(State& state, int input_token, const RunContext& rc) const {
  Tape& tape = *state.context.tape();
  const Var x = concat({dropout(embedding_.row(tape, input_token), rc), state.context});
  state.lstm = lstm_.step(x, state.lstm);
  return log_softmax(out_(state.lstm.h));
}

Var decoder_loss(const Decoder& decoder, const Var& context, std::span<const int> target,
                 ScheduledSampler* sampler, const RunContext& rc) {
  if (target.empty()) throw DataError("decoder_loss: empty target sequence");
  const auto vocab = static_cast<int>(decoder.vocab_size());
  for (int id : target) {
    if (id < 0 || id >= vocab) throw DataError("decoder_loss: target id " + std::to_string(id) + " outside vocabulary");
  }
  Decoder::State state = decoder.start(context);
  int input = Vocabulary::kSos;
  Var total;
  for (std::size_t m = 0; m < target.size(); ++m) {
    const Var lp = decoder.step(state, input, rc);
    const Var picked = select(lp, static_cast<std::size_t>(target[m]));
    total = total.valid() ? add(total, picked) : picked;
    if (m + 1 < target.size()) {
      input = sampler ? sampler->next_input(target[m], lp.value().data()) : target[m];
    }
  }
  return scale(total, -1.0 / static_cast<double>(target.size()));
}

// ---------------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, std::size_t vocab_size, std::uint64_t seed)
    : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size <= Vocabulary::kReserved) throw ConfigError("vocabulary holds only reserved tokens");
  Rng rng(seed);
  const std::size_t h = cfg_.hidden;
  const std::size_t mh = cfg_.resolved_modality_hidden();
  const std::size_t att = cfg_.resolved_attention_dim();

  embedding_ = Embedding::create(store_, "embedding", vocab_size, cfg_.embed_dim, rng);
  utterance_ = UtteranceEncoder(embedding_, Lstm::create(store_, "utterance.lstm", cfg_.embed_dim, h, rng));
  dialogue_ = DialogueStateEncoder(Lstm::create(store_, "dialogue.lstm", h, h, rng));
  std::size_t fused = h;
  if (cfg_.description != DescriptionSource::kNone) {
    description_.emplace(embedding_, Lstm::create(store_, "description.lstm", cfg_.embed_dim, h, rng),
                         AdditiveAttention::create(store_, "description.attention", h, h, att, rng));
    fused += h;
  }
  if (cfg_.use_video) {
    video_ = ModalityEncoder::create(store_, "video", Modality::kVideo, cfg_.encoder, h, mh, att, rng);
    fused += mh;
  }
  if (cfg_.use_audio) {
    audio_ = ModalityEncoder::create(store_, "audio", Modality::kAudio, cfg_.encoder, h, mh, att, rng);
    fused += mh;
  }
  fusion_ = Linear::create(store_, "fusion", fused, h, rng);
  answer_decoder_ = Decoder::create(store_, "answer_decoder", embedding_, h, h, rng);
  // created last so that toggling it leaves every other initial value alone
  if (cfg_.use_aux) aux_decoder_ = Decoder::create(store_, "aux_decoder", embedding_, mh, h, rng);
}

void Model::set_embeddings(const Tensor& table) {
  if (table.shape() != embedding_.table->value().shape()) {
    throw ShapeError("set_embeddings: table " + shape_str(table.shape()) + " but model expects " +
                     shape_str(embedding_.table->value().shape()));
  }
  embedding_.table->value() = table;
}

Var Model::fuse_context(const Var& dialogue_state, const Var* description, const Var* video,
                        const Var* audio) const {
  if (!dialogue_state.valid()) throw Error("fuse_context: dialogue state is required");
  auto check = [](bool active, const Var* v, const char* what) {
    if (active != (v != nullptr && v->valid())) {
      throw ConfigError(std::string("fuse_context: ") + what + (active ? " encoding missing" : " encoding given but disabled"));
    }
  };
  check(description_.has_value(), description, "description");
  check(video_.has_value(), video, "video");
  check(audio_.has_value(), audio, "audio");
  std::vector<Var> parts{dialogue_state};
  if (description) parts.push_back(*description);
  if (video) parts.push_back(*video);
  if (audio) parts.push_back(*audio);
  return fusion_(concat(parts));
}

std::size_t film_parameter_count(const Model& model) {
  return model.parameters().scalar_count("video.film.") + model.parameters().scalar_count("audio.film.");
}

// ---------------------------------------------------------------------------

DialogueTracker::DialogueTracker(const Model& model, Tape& tape, const DialogueExample& example,
                                 const RunContext& rc)
    : model_(model), tape_(tape), rc_(rc) {
  state_ = model.dialogue().initial(tape);
  if (const DescriptionEncoder* d = model.description()) {
    if (example.description.empty()) {
      throw DataError("dialogue " + example.video_id + ": description source enabled but description is empty");
    }
    description_keys_ = d->prepare(tape, example.description, rc);
  }
  if (const ModalityEncoder* v = model.video()) {
    if (!example.video) throw DataError("dialogue " + example.video_id + ": video features missing");
    video_ = v->prepare(tape, *example.video);
  }
  if (const ModalityEncoder* a = model.audio()) {
    if (!example.audio) throw DataError("dialogue " + example.video_id + ": audio features missing");
    audio_ = a->prepare(tape, *example.audio);
  }
}

TurnContext DialogueTracker::ask(std::span<const int> question) {
  const Var q = model_.utterance().encode(tape_, question, rc_).final_h;
  state_ = model_.dialogue().update(state_, q);
  ++utterances_;

  TurnContext out;
  out.question = q;
  Var desc, video, audio;
  if (description_keys_) {
    const AttentionResult r = model_.description()->attend(q, *description_keys_);
    desc = dropout(r.context, rc_);
    out.description_weights = r.full_weights;
  }
  if (video_) {
    const ModalityEncoding e = model_.video()->encode(*video_, q);
    video = dropout(e.attended, rc_);
    out.video_final_h = e.final.h;
    out.video_weights = e.weights;
  }
  if (audio_) {
    const ModalityEncoding e = model_.audio()->encode(*audio_, q);
    audio = dropout(e.attended, rc_);
    out.audio_weights = e.weights;
  }
  out.context = model_.fuse_context(dropout(state_.h, rc_), desc.valid() ? &desc : nullptr,
                                    video.valid() ? &video : nullptr, audio.valid() ? &audio : nullptr);
  return out;
}

void DialogueTracker::answer(std::span<const int> answer) {
  state_ = model_.dialogue().update(state_, model_.utterance().encode(tape_, answer, rc_).final_h);
  ++utterances_;
}

// ---------------------------------------------------------------------------

namespace {

void check_example(const DialogueExample& ex) {
  if (ex.questions.empty()) throw DataError("dialogue " + ex.video_id + " has no turns");
  if (ex.questions.size() != ex.answers.size()) {
    throw DataError("dialogue " + ex.video_id + ": question/answer count mismatch");
  }
}

TurnLoss turn_loss(const Model& model, const TurnContext& ctx, const DialogueExample& ex, std::size_t t,
                   const RunContext& rc, Samplers samplers) {
  TurnLoss loss;
  loss.answer = decoder_loss(model.answer_decoder(), ctx.context, ex.answers[t], samplers.answer, rc);
  loss.total = loss.answer;
  if (const Decoder* aux = model.aux_decoder()) {
    loss.aux = decoder_loss(*aux, ctx.video_final_h, ex.description, samplers.aux, rc);
    loss.total = add(loss.answer, scale(loss.aux, model.config().aux_weight));
  }
  return loss;
}

}  // namespace

std::vector<TurnLoss> forward_dialogue(const Model& model, Tape& tape, const DialogueExample& example,
                                       const RunContext& rc, Samplers samplers) {
  check_example(example);
  DialogueTracker tracker(model, tape, example, rc);
  std::vector<TurnLoss> out;
  out.reserve(example.turns());
  for (std::size_t t = 0; t < example.turns(); ++t) {
    const TurnContext ctx = tracker.ask(example.questions[t]);
    out.push_back(turn_loss(model, ctx, example, t, rc, samplers));
    tracker.answer(example.answers[t]);
  }
  return out;
}

TurnLoss forward_turn(const Model& model, Tape& tape, const DialogueExample& example, std::size_t t,
                      const RunContext& rc, Samplers samplers) {
  check_example(example);
  if (t >= example.turns()) {
    throw Error("forward_turn: turn " + std::to_string(t) + " out of range for a " +
                std::to_string(example.turns()) + "-turn dialogue");
  }
  DialogueTracker tracker(model, tape, example, rc);
  for (std::size_t i = 0; i < t; ++i) {
    tracker.ask(example.questions[i]);
    tracker.answer(example.answers[i]);
  }
  const TurnContext ctx = tracker.ask(example.questions[t]);
  return turn_loss(model, ctx, example, t, rc, samplers);
}

Var dialogue_loss(const Model& model, Tape& tape, const DialogueExample& example, const RunContext& rc,
                  Samplers samplers) {
  const std::vector<TurnLoss> turns = forward_dialogue(model, tape, example, rc, samplers);
  Var sum = turns.front().total;
  for (std::size_t i = 1; i < turns.size(); ++i) sum = add(sum, turns[i].total);
  return scale(sum, 1.0 / static_cast<double>(turns.size()));
}

}  // namespace fh
