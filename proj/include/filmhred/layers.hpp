// SPDX-License-Identifier: Apache-2.0
//
// Parameterised building blocks. Layers are thin views over parameters owned
// by a ParameterStore; they hold no per-pass state and may be shared by any
// number of tapes.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "filmhred/autograd.hpp"

namespace fh {

/// Half-width of the uniform initialisation range for all weights.
inline constexpr double kInitRange = 0.08;

enum class Mode { kTrain, kEval };

/// Per-pass switches: dropout mode and its random source. The dropout RNG is
/// distinct from the scheduled-sampling RNG.
struct RunContext {
  Mode mode = Mode::kEval;
  double retain = 1.0;
  Rng* dropout_rng = nullptr;
};

Tensor init_uniform(Shape shape, Rng& rng);

struct Linear {
  Parameter* weight = nullptr;  // [out, in]
  Parameter* bias = nullptr;    // [out] or null

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);

  std::size_t in_features() const { return weight->value().dim(1); }
  std::size_t out_features() const { return weight->value().dim(0); }

  /// x: [in] or [T, in].
  Var operator()(const Var& x) const;
};

struct Embedding {
  Parameter* table = nullptr;  // [vocab, dim]

  static Embedding create(ParameterStore& store, const std::string& name, std::size_t vocab,
                          std::size_t dim, Rng& rng);

  std::size_t vocab_size() const { return table->value().dim(0); }
  std::size_t dim() const { return table->value().dim(1); }

  Var lookup(Tape& tape, std::span<const int> ids) const;
  Var row(Tape& tape, int id) const;
};

struct LstmState {
  Var h;
  Var c;
};

struct LstmSequence {
  std::vector<Var> states;  // one h per input step; masked steps repeat the last valid h
  LstmState final;          // state after the last valid step
  std::size_t valid_steps = 0;
};

/// Single-layer LSTM with gate order [input, forget, cell, output]. Weight is
/// [4H, I + H] acting on concat(x, h_prev), so the parameter count is
/// 4·H·(I + H + 1).
struct Lstm {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  static Lstm create(ParameterStore& store, const std::string& name, std::size_t input,
                     std::size_t hidden, Rng& rng);

  std::size_t input_size() const;
  std::size_t hidden_size() const { return bias->value().dim(0) / 4; }
  std::size_t parameter_count() const;

  LstmState zero_state(Tape& tape) const;
  LstmState step(const Var& x, const LstmState& prev) const;

  /// Runs the sequence from `init` (zero state when null). `mask` is empty
  /// (all valid) or a prefix mask; masked steps carry the state forward
  /// untouched and never read their input.
  LstmSequence encode(std::span<const Var> inputs, std::span<const bool> mask = {},
                      const LstmState* init = nullptr) const;
  /// Same, with inputs given as the rows of a [T, I] matrix.
  LstmSequence encode_rows(const Var& inputs, const LstmState* init = nullptr) const;
};

struct AttentionResult {
  Var context;     // Σ wᵢ·keyᵢ
  Var weights;     // over valid keys only
  Tensor full_weights;  // length T, zeros at masked positions
};

/// Keys with their projection precomputed, reusable across queries.
struct AttentionKeys {
  Var keys;       // [n_valid, key_dim]
  Var projected;  // [n_valid, att_dim]
  std::size_t total = 0;  // including masked positions
};

/// score(key, query) = vᵀ·tanh(W_k·key + W_q·query).
struct AdditiveAttention {
  Parameter* key_proj = nullptr;    // [A, key_dim]
  Parameter* query_proj = nullptr;  // [A, query_dim]
  Parameter* score = nullptr;       // [A]

  static AdditiveAttention create(ParameterStore& store, const std::string& name,
                                  std::size_t key_dim, std::size_t query_dim, std::size_t att_dim,
                                  Rng& rng);

  AttentionKeys prepare(std::span<const Var> keys, std::span<const bool> mask = {}) const;
  AttentionResult attend(const Var& query, const AttentionKeys& keys) const;
  AttentionResult operator()(const Var& query, std::span<const Var> keys,
                             std::span<const bool> mask = {}) const {
    return attend(query, prepare(keys, mask));
  }
};

/// Inverted dropout: in train mode kept units are scaled by 1/retain. Eval
/// mode, or retain == 1, returns x unchanged.
Var dropout(const Var& x, double retain, Mode mode, Rng* rng);
inline Var dropout(const Var& x, const RunContext& rc) {
  return dropout(x, rc.retain, rc.mode, rc.dropout_rng);
}

/// Number of leading true entries; throws unless mask is a prefix mask.
std::size_t prefix_length(std::span<const bool> mask);

}  // namespace fh
