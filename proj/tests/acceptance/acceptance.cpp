// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner. Prints one PASS, FAIL or SKIP line per criterion, each
// at its stated tolerance. Exit status is 0 when every criterion ran to a
// verdict; pass --strict to also exit 1 when any verdict is FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "filmhred/checkpoint.hpp"
#include "filmhred/config.hpp"
#include "filmhred/corpus.hpp"
#include "filmhred/dataset.hpp"
#include "filmhred/errors.hpp"
#include "filmhred/features.hpp"
#include "filmhred/inference.hpp"
#include "filmhred/metrics.hpp"
#include "filmhred/model.hpp"
#include "filmhred/synth.hpp"
#include "filmhred/training.hpp"
#include "filmhred/vocab.hpp"
#include "oracles.hpp"

namespace fh {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

enum class Verdict { kPass, kFail, kSkip };

struct Outcome {
  Verdict verdict = Verdict::kFail;
  std::string detail;
};

// Collects named checks; the criterion passes only if all of them hold.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
    ++count_;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome outcome() const {
    if (failed_.empty()) return {Verdict::kPass, std::to_string(count_) + " checks" + (notes_.empty() ? "" : "; " + notes_)};
    std::string d = std::to_string(failed_.size()) + "/" + std::to_string(count_) + " failed: ";
    for (std::size_t i = 0; i < failed_.size(); ++i) d += (i ? ", " : "") + failed_[i];
    if (!notes_.empty()) d += "; " + notes_;
    return {Verdict::kFail, d};
  }

 private:
  std::vector<std::string> failed_;
  std::string notes_;
  std::size_t count_ = 0;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << x;
  return s.str();
}

void expect_suite(Checks& c, const testing::SuiteResult& r, std::size_t min_instances) {
  c.expect(r.passed() && r.instances >= min_instances,
           r.name + " (" + std::to_string(r.failures) + "/" + std::to_string(r.instances) + " failed, worst " +
               fmt(r.worst, 3) + ")");
}

// ---- 1 ----

Outcome gradient_suite() {
  Checks c;
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (const std::string& layer : testing::gradient_layers()) {
    const testing::SuiteResult r = testing::layer_gradient_suite(layer, 20);
    expect_suite(c, r, 20);
    worst = std::max(worst, r.worst);
  }
  const double elapsed = seconds_since(t0);
  c.expect(elapsed < 120.0, "runtime " + fmt(elapsed, 3) + "s >= 120s");
  c.note(std::to_string(testing::gradient_layers().size()) + " layers x 20 seeds, max rel err " + fmt(worst, 3) +
         ", " + fmt(elapsed, 3) + "s");
  return c.outcome();
}

// ---- 2 ----

Outcome film_contracts() {
  Checks c;
  expect_suite(c, testing::film_identity_suite(20), 20);
  expect_suite(c, testing::film_constant_suite(20), 20);
  expect_suite(c, testing::film_liveness_suite(20), 20);
  return c.outcome();
}

// ---- 3 ----

// Training setup for the overfit run. Teacher forcing and the answer loss
// only: the question is whether the model can memorise its training set.
constexpr double kOverfitLr = 0.003;
constexpr std::size_t kOverfitBatch = 1;

Outcome overfit() {
  Checks c;
  const auto t0 = Clock::now();
  SynthOptions so;
  so.seed = 1;
  so.dialogues = 16;
  so.vocab_size = 50;
  so.turns = 3;
  ModelConfig mc;
  mc.embed_dim = 32;
  mc.hidden = 32;
  mc.encoder.film_hidden = 32;
  mc.retain = 1.0;
  mc.use_aux = false;
  const testing::SynthBundle b = testing::load_synth(so, mc, testing::scratch_dir("acceptance_overfit"));
  Model model(mc, b.vocab.size(), 1);
  TrainConfig tc;
  tc.optimizer.lr = kOverfitLr;
  tc.batch_size = kOverfitBatch;
  tc.max_epochs = 500;
  tc.patience = 500;
  tc.scheduled_sampling = false;
  double min_loss = std::numeric_limits<double>::infinity();
  std::size_t first_below = 0;
  // Validation on the training split so the restored best weights are the
  // ones that decode the training answers best.
  train(tc, model, b.train, b.train, b.vocab, "", [&](const EpochRecord& r) {
    min_loss = std::min(min_loss, r.train_loss);
    if (first_below == 0 && r.train_loss < 0.1) first_below = r.epoch;
  });
  std::size_t exact = 0, total = 0;
  for (const DialogueExample& ex : b.train) {
    const std::vector<std::vector<int>> answers = decode_dialogue(model, ex, 0);
    for (std::size_t t = 0; t < answers.size(); ++t) {
      std::vector<int> ref = ex.answers[t];
      ref.pop_back();  // <eos>
      exact += answers[t] == ref;
      ++total;
    }
  }
  const double elapsed = seconds_since(t0);
  c.expect(min_loss < 0.1, "training loss " + fmt(min_loss, 4) + " >= 0.1 after 500 epochs");
  c.expect(total > 0 && exact * 10 >= total * 9, "exact answers " + std::to_string(exact) + "/" + std::to_string(total) + " < 90%");
  c.expect(elapsed < 300.0, "runtime " + fmt(elapsed, 3) + "s >= 300s");
  c.note("min loss " + fmt(min_loss, 4) + (first_below ? " (epoch " + std::to_string(first_below) + ")" : "") +
         ", exact " + std::to_string(exact) + "/" + std::to_string(total) + ", " + fmt(elapsed, 3) + "s");
  return c.outcome();
}

// ---- 4 ----

// Same width as the overfit run; 150 epochs lets most runs leave the
// early plateau where the decoder ignores the question.
constexpr std::size_t kFilmEpochs = 150;
constexpr double kFilmLr = 0.003;

double final_loss(const SynthOptions& so, bool use_film, std::uint64_t seed) {
  ModelConfig mc;
  mc.embed_dim = 32;
  mc.hidden = 32;
  mc.encoder.film_hidden = 32;
  mc.encoder.segments = 3;
  mc.encoder.video_dim = so.video_dim;
  mc.encoder.audio_dim = so.audio_dim;
  mc.encoder.use_film = use_film;
  mc.description = DescriptionSource::kNone;
  mc.use_aux = false;
  mc.retain = 1.0;
  const testing::SynthBundle b =
      testing::load_synth(so, mc, testing::scratch_dir("acceptance_film_" + std::to_string(seed)));
  Model model(mc, b.vocab.size(), seed);
  TrainConfig tc;
  tc.optimizer.lr = kFilmLr;
  tc.batch_size = 4;
  tc.max_epochs = kFilmEpochs;
  tc.patience = kFilmEpochs;
  tc.seed = seed;
  tc.scheduled_sampling = false;
  double last = 0.0;
  train(tc, model, b.train, b.valid, b.vocab, "", [&](const EpochRecord& r) { last = r.train_loss; });
  return last;
}

Outcome film_usefulness() {
  Checks c;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SynthOptions so;
    so.seed = seed;
    so.dialogues = 32;
    so.vocab_size = 30;
    so.video_dim = 8;
    so.video_rows = 6;
    so.audio_dim = 4;
    so.audio_rows = 4;
    const double film = final_loss(so, true, seed);
    const double plain = final_loss(so, false, seed);
    c.expect(film < plain, "seed " + std::to_string(seed));
    c.note("seed " + std::to_string(seed) + " " + fmt(film, 4) + " vs " + fmt(plain, 4));
  }
  return c.outcome();
}

// ---- 5 ----

Outcome beam_oracle() {
  Checks c;
  expect_suite(c, testing::beam_exhaustive_suite(20), 20);
  expect_suite(c, testing::beam_greedy_suite(20), 20);
  return c.outcome();
}

// ---- 6 ----

Outcome scheduled_sampling() {
  Checks c;
  constexpr std::size_t kVocab = 9;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    ParameterStore store;
    Rng rng(seed);
    const Decoder dec = Decoder::create(store, "dec", Embedding::create(store, "emb", kVocab, 3, rng), 4, 4, rng);
    const Tensor ctx = Tensor::uniform({4}, -1, 1, rng);
    std::vector<int> target(6);
    for (int& id : target) id = std::uniform_int_distribution<int>(Vocabulary::kReserved, kVocab - 1)(rng);
    target.back() = Vocabulary::kEos;

    ScheduledSampler always(0.2, seed);
    always.set_draw([] { return 1.0; });
    Tape t1, t2;
    const double sampled = decoder_loss(dec, t1.constant(ctx), target, &always, RunContext{}).value().item();
    const double forced = decoder_loss(dec, t2.constant(ctx), target, nullptr, RunContext{}).value().item();
    c.expect(std::memcmp(&sampled, &forced, sizeof(double)) == 0, "s=1 seed " + std::to_string(seed));

    ScheduledSampler never(0.2, seed);
    never.set_draw([] { return 0.0; });
    Tape t3;
    const Var loss = decoder_loss(dec, t3.constant(ctx), target, &never, RunContext{});
    store.zero_grad();
    t3.backward(loss);
    double g = 0.0;
    bool finite = std::isfinite(loss.value().item());
    for (Parameter* p : store.all()) {
      for (double x : p->grad().data()) {
        finite = finite && std::isfinite(x);
        g += std::abs(x);
      }
    }
    c.expect(finite && g > 0.0, "s=0 seed " + std::to_string(seed));
  }
  // The sampled path with its decisions frozen passes a finite-difference check.
  expect_suite(c, testing::layer_gradient_suite("sampled_decoder", 20), 20);
  return c.outcome();
}

// ---- 7 ----

EvalPair pair(const std::string& id, const std::string& cand, const std::vector<std::string>& refs) {
  EvalPair p;
  p.id = id;
  p.candidate = tokenize(cand);
  for (const std::string& r : refs) p.references.push_back(tokenize(r));
  return p;
}

Outcome metric_oracles() {
  Checks c;
  constexpr double kTol = 1e-6;
  const double b1 = bleu({pair("x", "the the the the the the the", {"the cat is on the mat"})}, 1)[0];
  c.expect(std::abs(b1 - 2.0 / 7.0) <= kTol, "BLEU clipping " + fmt(b1, 8) + " vs 2/7");
  const double rl = rouge_l({pair("x", "a b c", {"a c"})});
  c.expect(std::abs(rl - 0.7544) <= kTol, "ROUGE-L hand case " + fmt(rl, 8) + " vs 0.7544");
  const double cid = cider_d({pair("x", "red apple falls down", {"red apple falls down"}),
                              pair("y", "blue car drives fast", {"blue car drives fast"})});
  c.expect(std::abs(cid - 10.0) <= kTol, "CIDEr-D identity " + fmt(cid, 8));
  const double none = cider_d({pair("x", "green tree", {"red apple falls"}), pair("y", "cold night", {"blue car"})});
  c.expect(std::abs(none) <= kTol, "CIDEr-D disjoint " + fmt(none, 8));
  const std::vector<EvalPair> corpus{pair("a", "yes , he opens the door", {"yes , he opens the door"}),
                                     pair("b", "the room is very dark", {"the room is very dark"}),
                                     pair("c", "she drinks hot coffee", {"she drinks hot coffee"})};
  const MetricReport r = score_corpus(corpus);
  c.expect(std::abs(r.at("BLEU-4") - 1.0) <= kTol, "identical BLEU-4 " + fmt(r.at("BLEU-4"), 8));
  c.expect(std::abs(r.at("ROUGE-L") - 1.0) <= kTol, "identical ROUGE-L " + fmt(r.at("ROUGE-L"), 8));
  c.expect(std::abs(r.at("CIDEr-D") - 10.0) <= kTol, "identical CIDEr-D " + fmt(r.at("CIDEr-D"), 8));
  const MetricReport mixed = score_corpus({pair("a", "the man opens the door", {"a man opens the door slowly"}),
                                           pair("b", "she is cooking pasta", {"she cooks pasta in the kitchen"})});
  for (const auto& [name, v] : mixed.rows) {
    c.expect(v >= 0.0 && v <= (name == "CIDEr-D" ? 10.0 : 1.0), name + " out of range");
  }
  return c.outcome();
}

// ---- 8 ----

Outcome amsgrad() {
  Checks c;
  {
    ParameterStore store;
    Parameter& theta = store.add("theta", Tensor::vector({1.0}));
    theta.grad() = Tensor::vector({2.0});
    Amsgrad opt(AmsgradConfig{0.1, 0.9, 0.999, 1e-8});
    opt.step(store);
    c.expect(std::abs(theta.value()[0] - 0.683772283983154) <= 1e-9, "single step " + fmt(theta.value()[0], 12));
  }
  {
    ParameterStore store;
    store.add("p", Tensor::vector({0.1, 0.2, 0.3, 0.4, 0.5}));
    Amsgrad opt;
    Rng rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.0, 3.0);
    Tensor prev({5}, 0.0);
    std::size_t violations = 0;
    for (int step = 0; step < 10000; ++step) {
      const double s = scale(rng);
      for (double& x : store.at("p").grad().data()) x = s * g(rng);
      opt.step(store);
      const Tensor& vhat = opt.slots().at("p").vhat;
      for (std::size_t i = 0; i < 5; ++i) violations += vhat[i] < prev[i];
      prev = vhat;
    }
    c.expect(violations == 0, "v-hat decreased " + std::to_string(violations) + " times");
  }
  {
    ParameterStore store;
    Parameter& theta = store.add("theta", Tensor::vector({1.0}));
    Amsgrad opt(AmsgradConfig{0.05});
    int reached = 0;
    for (int step = 1; step <= 200 && reached == 0; ++step) {
      theta.grad() = Tensor::vector({2.0 * theta.value()[0]});
      opt.step(store);
      if (std::abs(theta.value()[0]) < 0.1) reached = step;
    }
    c.expect(reached > 0, "quadratic not below 0.1 in 200 steps");
    if (reached) c.note("quadratic below 0.1 at step " + std::to_string(reached));
  }
  return c.outcome();
}

// ---- 9 ----

template <typename F>
bool throws_kind(F&& f, FormatError::Kind kind) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind() == kind;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome roundtrips() {
  Checks c;
  Rng rng(4);
  std::normal_distribution<float> g(0.0f, 1.0f);
  FeatureTrack track{Modality::kVideo, 30, kVideoFeatureDim, {}, false};
  track.values.resize(track.rows * track.dims);
  for (float& x : track.values) x = g(rng);
  const std::vector<std::uint8_t> fbytes = encode_features(track);
  c.expect(decode_features(fbytes) == track, "feature roundtrip");
  std::vector<std::uint8_t> bad = fbytes;
  bad[0] = 'X';
  c.expect(throws_kind([&] { decode_features(bad); }, FormatError::Kind::kBadMagic), "feature magic");
  bad = fbytes;
  bad.resize(bad.size() / 2);
  c.expect(throws_kind([&] { decode_features(bad); }, FormatError::Kind::kTruncated), "feature truncation");
  bad = fbytes;
  bad[40] ^= 0x10;
  c.expect(throws_kind([&] { decode_features(bad); }, FormatError::Kind::kChecksum), "feature checksum");

  // A trained tiny model gives a realistic checkpoint.
  SynthOptions so;
  so.dialogues = 4;
  so.video_dim = 6;
  so.audio_dim = 4;
  so.video_rows = 4;
  so.audio_rows = 3;
  ModelConfig mc;
  mc.embed_dim = 6;
  mc.hidden = 8;
  mc.encoder.segments = 2;
  mc.encoder.film_blocks = 1;
  mc.encoder.film_hidden = 4;
  mc.encoder.video_dim = 6;
  mc.encoder.audio_dim = 4;
  const fs::path dir = testing::scratch_dir("acceptance_roundtrip");
  const testing::SynthBundle b = testing::load_synth(so, mc, dir / "data");
  Model model(mc, b.vocab.size(), 1);
  Amsgrad opt;
  TrainConfig tc;
  tc.max_epochs = 1;
  train(tc, model, b.train, b.valid, b.vocab, "", nullptr);
  const Checkpoint ckpt = make_checkpoint(model, &opt, b.vocab, "hidden = 8\n");
  save_checkpoint(dir / "a.fhck", ckpt);
  const Checkpoint back = load_checkpoint(dir / "a.fhck");
  c.expect(back == ckpt, "checkpoint equality");
  c.expect(encode_checkpoint(back) == encode_checkpoint(ckpt), "checkpoint bytes");
  const std::vector<std::uint8_t> cbytes = encode_checkpoint(ckpt);
  std::vector<std::uint8_t> cb = cbytes;
  cb[4] = 9;
  c.expect(throws_kind([&] { decode_checkpoint(cb); }, FormatError::Kind::kVersionMismatch), "checkpoint version");
  cb = cbytes;
  cb[cbytes.size() - 20] ^= 0xff;
  c.expect(throws_kind([&] { decode_checkpoint(cb); }, FormatError::Kind::kChecksum), "checkpoint checksum");
  cb = cbytes;
  cb.resize(cbytes.size() - 11);
  c.expect(throws_kind([&] { decode_checkpoint(cb); }, FormatError::Kind::kTruncated), "checkpoint truncation");

  const Dataset ds = load_dataset(dir / "data");
  for (const char* split : {"train", "valid", "test"}) {
    c.expect(parse_split(serialize_split(ds.split(split))) == ds.split(split), std::string("dataset ") + split);
    c.expect(ds.split(split) == b.data.dataset.split(split), std::string("synth ") + split);
  }
  bool pointer = false;
  try {
    parse_split(R"({"dialogs":[{"video_id":"x","caption":"c","dialog":[{"question":"q","answer":3}]}]})");
  } catch (const DataError& e) {
    pointer = std::string(e.what()).find("/dialogs/0/dialog/0/answer") != std::string::npos;
  }
  c.expect(pointer, "dataset schema error pointer");
  return c.outcome();
}

// ---- 10 ----

Outcome official_data() {
  Checks c;
  c.expect(relative_improvement(0.360, 0.309) >= 0.16, "table BLEU-4 arithmetic");
  c.expect(relative_improvement(0.997, 0.746) >= 0.33, "table CIDEr arithmetic");
  const char* root = std::getenv(kDataRootEnv);
  if (!root || !*root || !fs::exists(fs::path(root) / "train.json")) {
    return {Verdict::kSkip, std::string(kDataRootEnv) + " unset or has no train.json; table arithmetic " +
                                fmt(100 * relative_improvement(0.360, 0.309), 3) + "% / " +
                                fmt(100 * relative_improvement(0.997, 0.746), 3) + "%"};
  }
  const Dataset ds = load_dataset(root);
  const std::size_t n_train = ds.split("train").size(), n_valid = ds.split("valid").size(),
                    n_test = ds.split("test").size();
  c.expect(n_train == 7659 && n_valid == 1787 && n_test == 1710,
           "split sizes " + std::to_string(n_train) + "/" + std::to_string(n_valid) + "/" + std::to_string(n_test));
  const fs::path out = fs::path(root) / "outputs";
  if (fs::exists(out / "model.tsv") && fs::exists(out / "baseline.tsv") && fs::exists(out / "references.tsv")) {
    const MetricReport m = score_run(out / "model.tsv", out / "references.tsv");
    const MetricReport base = score_run(out / "baseline.tsv", out / "references.tsv");
    const double rb = relative_improvement(m.at("BLEU-4"), base.at("BLEU-4"));
    const double rc = relative_improvement(m.at("CIDEr-D"), base.at("CIDEr-D"));
    c.expect(rb >= 0.16, "relative BLEU-4 " + fmt(100 * rb, 3) + "%");
    c.expect(rc >= 0.33, "relative CIDEr-D " + fmt(100 * rc, 3) + "%");
  } else {
    c.note("no stored outputs under " + out.string());
  }
  return c.outcome();
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace fh

int main(int argc, char** argv) {
  using namespace fh;
  bool strict = false;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") {
      strict = true;
    } else {
      try {
        only.push_back(std::stoi(a));
      } catch (const std::exception&) {
        std::cerr << "usage: " << argv[0] << " [--strict] [criterion...]\n";
        return 2;
      }
    }
  }
  const std::vector<Criterion> criteria{
      {1, "gradient suite", gradient_suite},
      {2, "FiLM contracts", film_contracts},
      {3, "overfit", overfit},
      {4, "conditioning usefulness", film_usefulness},
      {5, "beam oracle", beam_oracle},
      {6, "scheduled sampling", scheduled_sampling},
      {7, "metric oracles", metric_oracles},
      {8, "AMSGrad", amsgrad},
      {9, "roundtrips", roundtrips},
      {10, "official data", official_data},
  };
  std::size_t failures = 0;
  for (const Criterion& cr : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), cr.number) == only.end()) continue;
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kFail ? "FAIL" : "SKIP";
    failures += o.verdict == Verdict::kFail;
    std::cout << tag << " " << cr.number << " " << cr.name << ": " << o.detail << std::endl;
  }
  return strict && failures > 0 ? 1 : 0;
}
