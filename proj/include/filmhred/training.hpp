// SPDX-License-Identifier: Apache-2.0
//
// Optimisation and the training loop with validation BLEU-4 early stopping.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "filmhred/checkpoint.hpp"
#include "filmhred/model.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

struct AmsgradConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AmsgradSlot {
  Tensor m, v, vhat;
};

/// AMSGrad without bias correction:
///   m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²;  v̂ ← max(v̂, v);
///   θ ← θ − lr·m / (√v̂ + ε)
class Amsgrad {
 public:
  explicit Amsgrad(AmsgradConfig cfg = {});

  const AmsgradConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::uint64_t steps() const { return steps_; }

  /// Throws NumericError naming the first parameter with a non-finite
  /// gradient; nothing is updated in that case.
  void step(std::span<Parameter* const> params);
  void step(ParameterStore& store);

  const std::map<std::string, AmsgradSlot>& slots() const { return slots_; }

  void save_state(Checkpoint& ckpt) const;
  void load_state(const Checkpoint& ckpt);

 private:
  AmsgradConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, AmsgradSlot> slots_;
};

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(ParameterStore& store, double max_norm);

struct TrainConfig {
  AmsgradConfig optimizer;
  double clip_norm = 5.0;
  std::size_t batch_size = 8;  // dialogues per update
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  std::uint64_t seed = 1;
  bool scheduled_sampling = true;  // false: pure teacher forcing

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_bleu4 = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seed for an independent random stream derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Capture model parameters (and optimizer state when given).
Checkpoint make_checkpoint(const Model& model, const Amsgrad* optimizer, const Vocabulary& vocab,
                           const std::string& config_text);
/// Copies checkpoint parameters into the model; names and shapes must match.
void restore_parameters(Model& model, const Checkpoint& ckpt);

/// Corpus BLEU-4 of greedy answers against the ground-truth answers.
double validation_bleu4(const Model& model, const std::vector<DialogueExample>& examples, const Vocabulary& vocab);

/// Mean per-dialogue loss in eval mode with teacher forcing.
double evaluation_loss(const Model& model, const std::vector<DialogueExample>& examples);

/// Trains in place. After every epoch the validation split is decoded
/// greedily and scored with BLEU-4; training stops after `patience` epochs
/// without strict improvement. On return the model holds the best weights.
TrainResult train(const TrainConfig& cfg, Model& model, const std::vector<DialogueExample>& train_set,
                  const std::vector<DialogueExample>& valid_set, const Vocabulary& vocab,
                  const std::string& config_text, const EpochCallback& on_epoch = {});

struct SearchSpace {
  double lr_min = 1e-4;
  double lr_max = 1e-2;
  std::vector<std::size_t> hidden{128, 256};
  double retain_min = 0.6;
  double retain_max = 0.9;

  void validate() const;
};

struct Trial {
  std::size_t index = 0;
  double lr = 0.0;
  std::size_t hidden = 0;
  double retain = 0.0;
  double val_bleu4 = 0.0;
};

/// Trains one sampled configuration and returns its validation BLEU-4.
using TrialRunner = std::function<double(const ModelConfig&, const TrainConfig&)>;

/// Samples `budget` configurations (lr log-uniform, hidden uniform over the
/// set, retain uniform), runs each and returns them best first (ties by
/// trial index). Every trial trains with the base seed.
std::vector<Trial> random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                 const ModelConfig& base_model, const TrainConfig& base_train,
                                 const TrialRunner& run);

}  // namespace fh
