// SPDX-License-Identifier: Apache-2.0

#include "filmhred/layers.hpp"

#include <algorithm>

#include "filmhred/errors.hpp"

namespace fh {

Tensor init_uniform(Shape shape, Rng& rng) {
  return Tensor::uniform(std::move(shape), -kInitRange, kInitRange, rng);
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = &store.add(name + ".weight", init_uniform({out, in}, rng));
  if (with_bias) l.bias = &store.add(name + ".bias", init_uniform({out}, rng));
  return l;
}

Var Linear::operator()(const Var& x) const {
  Tape& t = *x.tape();
  if (bias) return linear(x, t.param(*weight), t.param(*bias));
  return linear(x, t.param(*weight));
}

Embedding Embedding::create(ParameterStore& store, const std::string& name, std::size_t vocab,
                            std::size_t dim, Rng& rng) {
  Embedding e;
  e.table = &store.add(name + ".weight", init_uniform({vocab, dim}, rng));
  return e;
}

Var Embedding::lookup(Tape& tape, std::span<const int> ids) const {
  return embedding_gather(tape.param(*table), ids);
}

Var Embedding::row(Tape& tape, int id) const { return embedding_row(tape.param(*table), id); }

Lstm Lstm::create(ParameterStore& store, const std::string& name, std::size_t input,
                  std::size_t hidden, Rng& rng) {
  Lstm l;
  l.weight = &store.add(name + ".weight", init_uniform({4 * hidden, input + hidden}, rng));
  l.bias = &store.add(name + ".bias", init_uniform({4 * hidden}, rng));
  return l;
}

std::size_t Lstm::input_size() const { return weight->value().dim(1) - hidden_size(); }

std::size_t Lstm::parameter_count() const {
  return weight->value().numel() + bias->value().numel();
}

LstmState Lstm::zero_state(Tape& tape) const {
  const std::size_t h = hidden_size();
  return {tape.constant(Tensor(Shape{h}, 0.0)), tape.constant(Tensor(Shape{h}, 0.0))};
}

LstmState Lstm::step(const Var& x, const LstmState& prev) const {
  if (x.shape() != Shape{input_size()}) {
    throw ShapeError("lstm_step: input shape " + shape_str(x.shape()) + " but LSTM expects [" +
                     std::to_string(input_size()) + "]");
  }
  if (prev.h.shape() != Shape{hidden_size()} || prev.c.shape() != Shape{hidden_size()}) {
    throw ShapeError("lstm_step: state shape " + shape_str(prev.h.shape()) + " but LSTM expects [" +
                     std::to_string(hidden_size()) + "]");
  }
  Tape& t = *x.tape();
  const Var gates = linear(concat({x, prev.h}), t.param(*weight), t.param(*bias));
  const Var c = lstm_cell_state(gates, prev.c);
  const Var h = lstm_cell_output(gates, c);
  return {h, c};
}

std::size_t prefix_length(std::span<const bool> mask) {
  std::size_t n = 0;
  while (n < mask.size() && mask[n]) ++n;
  for (std::size_t i = n; i < mask.size(); ++i) {
    if (mask[i]) throw Error("mask is not a prefix mask (valid step after a masked one)");
  }
  return n;
}

LstmSequence Lstm::encode(std::span<const Var> inputs, std::span<const bool> mask,
                          const LstmState* init) const {
  if (inputs.empty()) throw Error("lstm_encode_sequence: empty sequence");
  if (!mask.empty() && mask.size() != inputs.size()) {
    throw Error("lstm_encode_sequence: mask length " + std::to_string(mask.size()) +
                " != sequence length " + std::to_string(inputs.size()));
  }
  const std::size_t valid = mask.empty() ? inputs.size() : prefix_length(mask);
  LstmSequence seq;
  seq.valid_steps = valid;
  LstmState s = init ? *init : zero_state(*inputs[0].tape());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    if (t < valid) s = step(inputs[t], s);
    seq.states.push_back(s.h);
  }
  seq.final = s;
  return seq;
}

LstmSequence Lstm::encode_rows(const Var& inputs, const LstmState* init) const {
  if (inputs.shape().size() != 2) {
    throw ShapeError("lstm_encode_sequence: expected [T, I] inputs, got " + shape_str(inputs.shape()));
  }
  std::vector<Var> rows;
  rows.reserve(inputs.shape()[0]);
  for (std::size_t r = 0; r < inputs.shape()[0]; ++r) rows.push_back(row(inputs, r));
  return encode(rows, {}, init);
}

AdditiveAttention AdditiveAttention::create(ParameterStore& store, const std::string& name,
                                            std::size_t key_dim, std::size_t query_dim,
                                            std::size_t att_dim, Rng& rng) {
  AdditiveAttention a;
  a.key_proj = &store.add(name + ".key_proj", init_uniform({att_dim, key_dim}, rng));
  a.query_proj = &store.add(name + ".query_proj", init_uniform({att_dim, query_dim}, rng));
  a.score = &store.add(name + ".score", init_uniform({att_dim}, rng));
  return a;
}

AttentionKeys AdditiveAttention::prepare(std::span<const Var> keys, std::span<const bool> mask) const {
  if (keys.empty()) throw Error("additive_attention: no keys");
  if (!mask.empty() && mask.size() != keys.size()) {
    throw Error("additive_attention: mask length does not match key count");
  }
  const std::size_t valid = mask.empty() ? keys.size() : prefix_length(mask);
  if (valid == 0) throw Error("additive_attention: all keys are masked");
  Tape& t = *keys[0].tape();
  AttentionKeys k;
  k.total = keys.size();
  k.keys = stack(keys.subspan(0, valid));
  k.projected = linear(k.keys, t.param(*key_proj));
  return k;
}

AttentionResult AdditiveAttention::attend(const Var& query, const AttentionKeys& keys) const {
  Tape& t = *query.tape();
  const Var q = linear(query, t.param(*query_proj));
  const Var energy = tanh(add(keys.projected, q));
  const Var scores = matmul(energy, t.param(*score));
  AttentionResult r;
  r.weights = softmax(scores);
  r.context = matmul(r.weights, keys.keys);
  r.full_weights = Tensor(Shape{keys.total}, 0.0);
  const auto w = r.weights.value().data();
  std::copy(w.begin(), w.end(), r.full_weights.data().begin());
  return r;
}

Var dropout(const Var& x, double retain, Mode mode, Rng* rng) {
  if (!(retain > 0.0) || retain > 1.0) {
    throw ConfigError("dropout: retain probability must be in (0, 1], got " + std::to_string(retain));
  }
  if (mode == Mode::kEval || retain == 1.0) return x;
  if (!rng) throw Error("dropout: train mode requires an RNG");
  Tensor mask(x.shape(), 0.0);
  std::bernoulli_distribution keep(retain);
  for (double& m : mask.data()) m = keep(*rng) ? 1.0 / retain : 0.0;
  return mul(x, x.tape()->constant(std::move(mask)));
}

}  // namespace fh
