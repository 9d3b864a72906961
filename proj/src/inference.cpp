// SPDX-License-Identifier: Apache-2.0

#include "filmhred/inference.hpp"

#include <algorithm>
#include <limits>

#include "filmhred/errors.hpp"

namespace fh {

namespace {

struct Live {
  Hypothesis hyp;
  Decoder::State state;
};

bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

bool closes(const Hypothesis& h, std::size_t max_len) {
  return h.tokens.back() == Vocabulary::kEos || h.tokens.size() >= max_len;
}

void check_options(const DecodeOptions& opts) {
  if (opts.max_len < 1) throw ConfigError("decode: max_len must be >= 1");
}

}  // namespace

std::vector<int> Hypothesis::answer() const {
  std::vector<int> out = tokens;
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

Hypothesis greedy_decode(const Decoder& decoder, const Tensor& context, const DecodeOptions& opts) {
  check_options(opts);
  Tape tape(false);
  const RunContext rc;
  Decoder::State state = decoder.start(tape.constant(context));
  Hypothesis h;
  int input = Vocabulary::kSos;
  while (!h.finished) {
    const auto lp = decoder.step(state, input, rc).value().data();
    int best = -1;
    for (std::size_t i = 0; i < lp.size(); ++i) {
      if (opts.suppress_unk && static_cast<int>(i) == Vocabulary::kUnk) continue;
      if (best < 0 || lp[i] > lp[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    h.tokens.push_back(best);
    h.log_prob += lp[static_cast<std::size_t>(best)];
    h.finished = closes(h, opts.max_len);
    input = best;
  }
  return h;
}

BeamResult beam_search(const Decoder& decoder, const Tensor& context, std::size_t beam_width,
                       const DecodeOptions& opts) {
  if (beam_width < 1) throw ConfigError("beam_search: beam width must be >= 1");
  check_options(opts);
  Tape tape(false);
  const RunContext rc;
  std::vector<Live> beam;
  beam.push_back({Hypothesis{}, decoder.start(tape.constant(context))});

  auto any_live = [&] {
    return std::any_of(beam.begin(), beam.end(), [](const Live& l) { return !l.hyp.finished; });
  };
  while (any_live()) {
    std::vector<Live> pool;
    for (Live& l : beam) {
      if (l.hyp.finished) {
        pool.push_back(std::move(l));
        continue;
      }
      const int input = l.hyp.tokens.empty() ? Vocabulary::kSos : l.hyp.tokens.back();
      Decoder::State next = l.state;
      const auto lp = decoder.step(next, input, rc).value().data();
      for (std::size_t i = 0; i < lp.size(); ++i) {
        if (opts.suppress_unk && static_cast<int>(i) == Vocabulary::kUnk) continue;
        Live child{l.hyp, next};
        child.hyp.tokens.push_back(static_cast<int>(i));
        child.hyp.log_prob += lp[i];
        child.hyp.finished = closes(child.hyp, opts.max_len);
        pool.push_back(std::move(child));
      }
    }
    const std::size_t keep = std::min(beam_width, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      [](const Live& a, const Live& b) { return ranks_before(a.hyp, b.hyp); });
    pool.resize(keep);
    beam = std::move(pool);
  }

  BeamResult out;
  for (const Live& l : beam) out.top.push_back(l.hyp);
  out.best = out.top.front();
  return out;
}

std::vector<std::vector<int>> decode_dialogue(const Model& model, const DialogueExample& example,
                                              std::size_t beam_width, const DecodeOptions& opts) {
  Tape tape(false);
  const RunContext rc;
  DialogueTracker tracker(model, tape, example, rc);
  std::vector<std::vector<int>> out;
  for (std::size_t t = 0; t < example.turns(); ++t) {
    const Tensor ctx = tracker.ask(example.questions[t]).context.value();
    const Hypothesis h = beam_width == 0 ? greedy_decode(model.answer_decoder(), ctx, opts)
                                         : beam_search(model.answer_decoder(), ctx, beam_width, opts).best;
    out.push_back(h.answer());
    tracker.answer(example.answers[t]);
  }
  return out;
}

}  // namespace fh
