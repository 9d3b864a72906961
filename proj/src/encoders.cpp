// SPDX-License-Identifier: Apache-2.0

#include "filmhred/encoders.hpp"

#include "filmhred/errors.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

std::string to_string(DescriptionSource s) {
  switch (s) {
    case DescriptionSource::kCaption: return "caption";
    case DescriptionSource::kSummary: return "summary";
    case DescriptionSource::kBoth: return "both";
    case DescriptionSource::kNone: return "none";
  }
  return "none";
}

DescriptionSource parse_description_source(const std::string& s) {
  if (s == "caption") return DescriptionSource::kCaption;
  if (s == "summary") return DescriptionSource::kSummary;
  if (s == "both") return DescriptionSource::kBoth;
  if (s == "none") return DescriptionSource::kNone;
  throw ConfigError("description must be one of caption|summary|both|none, got '" + s + "'");
}

void EncoderConfig::validate() const {
  if (segments < 1) throw ConfigError("segments (L) must be >= 1");
  if (film_hidden < 1) throw ConfigError("film_hidden must be >= 1");
  if (video_dim < 1 || audio_dim < 1) throw ConfigError("feature dims must be >= 1");
}

UtteranceEncoder::Result UtteranceEncoder::encode(Tape& tape, std::span<const int> tokens,
                                                  const RunContext& rc) const {
  if (tokens.empty()) throw DataError("encode_utterance: empty utterance");
  if (tokens.back() != Vocabulary::kEos) throw DataError("encode_utterance: utterance must end with <eos>");
  const std::size_t vocab = embedding_.vocab_size();
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DataError("encode_utterance: token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(vocab));
    }
  }
  const Var embedded = dropout(embedding_.lookup(tape, tokens), rc);
  Result r;
  r.sequence = lstm_.encode_rows(embedded);
  r.final_h = r.sequence.final.h;
  return r;
}

AttentionKeys DescriptionEncoder::prepare(Tape& tape, std::span<const int> tokens,
                                          const RunContext& rc) const {
  if (tokens.empty()) throw DataError("encode_description: empty description");
  const Var embedded = dropout(embedding_.lookup(tape, tokens), rc);
  const LstmSequence seq = lstm_.encode_rows(embedded);
  return attention_.prepare(seq.states);
}

Var film_affine(const Var& h, const Var& gamma, const Var& beta) {
  return add(mul(h, gamma), beta);
}

FilmBlock FilmBlock::create(ParameterStore& store, const std::string& name, std::size_t width,
                            std::size_t question_dim, Rng& rng) {
  FilmBlock b;
  b.pre = Linear::create(store, name + ".pre", width, width, rng, /*with_bias=*/false);
  b.cond = Linear::create(store, name + ".cond", question_dim, 2 * width, rng);
  return b;
}

std::pair<Var, Var> FilmBlock::modulation(const Var& question) const {
  if (question.shape() != Shape{cond.in_features()}) {
    throw ShapeError("film_block: question encoding " + shape_str(question.shape()) +
                     " but conditioning expects [" + std::to_string(cond.in_features()) + "]");
  }
  const Var gb = cond(question);
  const std::size_t w = width();
  return {slice(gb, 0, 0, w), slice(gb, 0, w, 2 * w)};
}

Var FilmBlock::operator()(const Var& features, const Var& question) const {
  if (features.shape().size() != 2 || features.shape()[1] != width()) {
    throw ShapeError("film_block: features " + shape_str(features.shape()) + " but block width is " +
                     std::to_string(width()));
  }
  const auto [gamma, beta] = modulation(question);
  const Var h = relu(pre(features));
  return add(relu(film_affine(h, gamma, beta)), features);
}

ModalityEncoder ModalityEncoder::create(ParameterStore& store, const std::string& name,
                                        Modality modality, const EncoderConfig& cfg,
                                        std::size_t question_dim, std::size_t hidden,
                                        std::size_t attention_dim, Rng& rng) {
  cfg.validate();
  ModalityEncoder e;
  e.modality_ = modality;
  e.feature_dim_ = modality == Modality::kVideo ? cfg.video_dim : cfg.audio_dim;
  std::size_t lstm_input = e.feature_dim_;
  if (cfg.use_film) {
    e.required_rows_ = modality == Modality::kVideo ? cfg.segments : 0;
    e.stem_ = Linear::create(store, name + ".film.input", e.feature_dim_, cfg.film_hidden, rng);
    for (std::size_t i = 0; i < cfg.film_blocks; ++i) {
      e.blocks_.push_back(
          FilmBlock::create(store, name + ".film.block" + std::to_string(i), cfg.film_hidden, question_dim, rng));
    }
    e.fc_ = Linear::create(store, name + ".film.fc", cfg.film_hidden, cfg.resolved_fc_dim(), rng);
    lstm_input = cfg.resolved_fc_dim();
  }
  e.lstm_ = Lstm::create(store, name + ".lstm", lstm_input, hidden, rng);
  e.attention_ = AdditiveAttention::create(store, name + ".attention", hidden, question_dim, attention_dim, rng);
  return e;
}

ModalityEncoder::Prepared ModalityEncoder::prepare(Tape& tape, const Tensor& track) const {
  const std::string what = "encode_" + modality_name(modality_);
  if (track.rank() != 2 || track.dim(1) != feature_dim_) {
    throw ShapeError(what + ": track " + shape_str(track.shape()) + " but encoder expects [*, " +
                     std::to_string(feature_dim_) + "]");
  }
  if (required_rows_ && track.dim(0) != required_rows_) {
    throw ShapeError(what + ": track has " + std::to_string(track.dim(0)) + " rows but FiLM path needs L=" +
                     std::to_string(required_rows_));
  }
  Prepared p;
  p.features = tape.constant(track);
  if (stem_) {
    p.stem = relu((*stem_)(p.features));
  } else {
    const LstmSequence seq = lstm_.encode_rows(p.features);
    p.keys = attention_.prepare(seq.states);
    p.final = seq.final;
  }
  return p;
}

Var ModalityEncoder::conditioned_features(const Prepared& prepared, const Var& question) const {
  if (!stem_) throw Error("conditioned_features: encoder has no FiLM path");
  Var x = prepared.stem;
  for (const FilmBlock& b : blocks_) x = b(x, question);
  return relu((*fc_)(x));
}

ModalityEncoding ModalityEncoder::encode(const Prepared& prepared, const Var& question) const {
  ModalityEncoding out;
  AttentionResult att;
  if (stem_) {
    const LstmSequence seq = lstm_.encode_rows(conditioned_features(prepared, question));
    att = attention_.attend(question, attention_.prepare(seq.states));
    out.final = seq.final;
  } else {
    att = attention_.attend(question, *prepared.keys);
    out.final = prepared.final;
  }
  out.attended = att.context;
  out.weights = att.full_weights;
  return out;
}

}  // namespace fh
