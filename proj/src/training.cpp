// SPDX-License-Identifier: Apache-2.0

#include "filmhred/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "filmhred/errors.hpp"
#include "filmhred/inference.hpp"
#include "filmhred/metrics.hpp"

namespace fh {

Amsgrad::Amsgrad(AmsgradConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
      !(cfg.eps > 0.0)) {
    throw ConfigError("AMSGrad: need lr >= 0, beta1/beta2 in [0, 1), eps > 0");
  }
}

void Amsgrad::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (!p->grad().all_finite()) throw NumericError("AMSGrad: non-finite gradient in " + p->name());
  }
  for (Parameter* p : params) {
    AmsgradSlot& s = slots_[p->name()];
    if (!s.m.defined()) {
      s.m = Tensor(p->value().shape());
      s.v = Tensor(p->value().shape());
      s.vhat = Tensor(p->value().shape());
    }
    auto theta = p->value().data();
    const auto g = p->grad().data();
    auto m = s.m.data(), v = s.v.data(), vh = s.vhat.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      vh[i] = std::max(vh[i], v[i]);
      theta[i] -= cfg_.lr * m[i] / (std::sqrt(vh[i]) + cfg_.eps);
    }
  }
  ++steps_;
}

void Amsgrad::step(ParameterStore& store) {
  const std::vector<Parameter*> params = store.all();
  step(params);
}

void Amsgrad::save_state(Checkpoint& ckpt) const {
  ckpt.optimizer.clear();
  for (const auto& [name, s] : slots_) {
    ckpt.optimizer.emplace_back("m/" + name, s.m);
    ckpt.optimizer.emplace_back("v/" + name, s.v);
    ckpt.optimizer.emplace_back("vhat/" + name, s.vhat);
  }
  ckpt.optimizer_steps = steps_;
}

void Amsgrad::load_state(const Checkpoint& ckpt) {
  slots_.clear();
  for (const auto& [key, t] : ckpt.optimizer) {
    const auto slash = key.find('/');
    if (slash == std::string::npos) throw FormatError(FormatError::Kind::kMalformed, "bad optimizer entry " + key);
    const std::string kind = key.substr(0, slash);
    AmsgradSlot& s = slots_[key.substr(slash + 1)];
    if (kind == "m") s.m = t;
    else if (kind == "v") s.v = t;
    else if (kind == "vhat") s.vhat = t;
    else throw FormatError(FormatError::Kind::kMalformed, "bad optimizer entry " + key);
  }
  steps_ = ckpt.optimizer_steps;
}

double clip_global_norm(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : std::as_const(store).all()) {
    for (double g : p->grad().values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (Parameter* p : store.all()) {
      for (double& g : p->grad().data()) g *= f;
    }
  }
  return norm;
}

void TrainConfig::validate() const {
  Amsgrad check(optimizer);
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Checkpoint make_checkpoint(const Model& model, const Amsgrad* optimizer, const Vocabulary& vocab,
                           const std::string& config_text) {
  Checkpoint c;
  for (const Parameter* p : model.parameters().all()) c.parameters.emplace_back(p->name(), p->value());
  if (optimizer) optimizer->save_state(c);
  c.config = config_text;
  c.vocabulary = vocab.tokens();
  return c;
}

void restore_parameters(Model& model, const Checkpoint& ckpt) {
  ParameterStore& store = model.parameters();
  if (ckpt.parameters.size() != store.size()) {
    throw FormatError(FormatError::Kind::kMalformed,
                      "checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, model has " +
                          std::to_string(store.size()));
  }
  for (const auto& [name, t] : ckpt.parameters) {
    Parameter* p = store.find(name);
    if (!p) throw FormatError(FormatError::Kind::kMalformed, "checkpoint tensor " + name + " is not a model parameter");
    if (p->value().shape() != t.shape()) {
      throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) + ", model expects " +
                       shape_str(p->value().shape()));
    }
    p->value() = t;
  }
}

namespace {

Tokens id_tokens(std::span<const int> ids, const Vocabulary& vocab) {
  Tokens out;
  for (int id : ids) {
    if (id == Vocabulary::kEos) break;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace

double validation_bleu4(const Model& model, const std::vector<DialogueExample>& examples, const Vocabulary& vocab) {
  std::vector<EvalPair> corpus;
  for (const DialogueExample& ex : examples) {
    const auto answers = decode_dialogue(model, ex, 0);
    for (std::size_t t = 0; t < answers.size(); ++t) {
      EvalPair p;
      p.id = ex.video_id + "_" + std::to_string(t);
      p.candidate = id_tokens(answers[t], vocab);
      p.references.push_back(id_tokens(ex.answers[t], vocab));
      corpus.push_back(std::move(p));
    }
  }
  return bleu(corpus, 4)[3];
}

double evaluation_loss(const Model& model, const std::vector<DialogueExample>& examples) {
  if (examples.empty()) throw DataError("evaluation_loss: empty split");
  double sum = 0.0;
  for (const DialogueExample& ex : examples) {
    Tape tape(false);
    sum += dialogue_loss(model, tape, ex, RunContext{}).value().item();
  }
  return sum / static_cast<double>(examples.size());
}

TrainResult train(const TrainConfig& cfg, Model& model, const std::vector<DialogueExample>& train_set,
                  const std::vector<DialogueExample>& valid_set, const Vocabulary& vocab,
                  const std::string& config_text, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("train: empty training split");
  if (valid_set.empty()) throw DataError("train: empty validation split");

  Amsgrad optimizer(cfg.optimizer);
  Rng dropout_rng(derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  const double threshold = model.config().sampler_threshold;
  ScheduledSampler answer_sampler(threshold, derive_seed(cfg.seed, 3));
  ScheduledSampler aux_sampler(threshold, derive_seed(cfg.seed, 4));
  Samplers samplers;
  if (cfg.scheduled_sampling) samplers = {&answer_sampler, &aux_sampler};
  const RunContext rc{Mode::kTrain, model.config().retain, &dropout_rng};

  TrainResult result;
  double best = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      model.parameters().zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        Tape tape;
        const Var loss = dialogue_loss(model, tape, train_set[order[i]], rc, samplers);
        loss_sum += loss.value().item();
        tape.backward(scale(loss, 1.0 / static_cast<double>(end - start)));
      }
      clip_global_norm(model.parameters(), cfg.clip_norm);
      optimizer.step(model.parameters());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_bleu4 = validation_bleu4(model, valid_set, vocab);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_bleu4 > best) {
      best = rec.val_bleu4;
      since_best = 0;
      result.best = make_checkpoint(model, &optimizer, vocab, config_text);
      result.best.best_bleu4 = best;
      result.best.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }
  restore_parameters(model, result.best);
  return result;
}

void SearchSpace::validate() const {
  if (hidden.empty()) throw ConfigError("search space: hidden size set is empty");
  if (!(lr_min > 0.0 && lr_min <= lr_max)) throw ConfigError("search space: need 0 < lr_min <= lr_max");
  if (!(retain_min > 0.0 && retain_min <= retain_max && retain_max <= 1.0)) {
    throw ConfigError("search space: need 0 < retain_min <= retain_max <= 1");
  }
}

std::vector<Trial> random_search(const SearchSpace& space, std::size_t budget, std::uint64_t seed,
                                 const ModelConfig& base_model, const TrainConfig& base_train,
                                 const TrialRunner& run) {
  space.validate();
  if (budget < 1) throw ConfigError("random search budget must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo == hi ? lo : lo + (hi - lo) * unit(rng); };

  std::vector<Trial> trials;
  for (std::size_t i = 0; i < budget; ++i) {
    Trial t;
    t.index = i;
    t.lr = space.lr_min == space.lr_max ? space.lr_min
                                        : std::exp(between(std::log(space.lr_min), std::log(space.lr_max)));
    t.hidden = space.hidden[std::uniform_int_distribution<std::size_t>(0, space.hidden.size() - 1)(rng)];
    t.retain = between(space.retain_min, space.retain_max);

    ModelConfig mc = base_model;
    mc.hidden = t.hidden;
    mc.retain = t.retain;
    TrainConfig tc = base_train;
    tc.optimizer.lr = t.lr;
    t.val_bleu4 = run(mc, tc);
    trials.push_back(t);
  }
  std::stable_sort(trials.begin(), trials.end(),
                   [](const Trial& a, const Trial& b) { return a.val_bleu4 > b.val_bleu4; });
  return trials;
}

}  // namespace fh
