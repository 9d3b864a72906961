// SPDX-License-Identifier: Apache-2.0

#include "filmhred/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "filmhred/checkpoint.hpp"
#include "filmhred/config.hpp"
#include "filmhred/corpus.hpp"
#include "filmhred/dataset.hpp"
#include "filmhred/embeddings.hpp"
#include "filmhred/errors.hpp"
#include "filmhred/inference.hpp"
#include "filmhred/metrics.hpp"
#include "filmhred/synth.hpp"
#include "filmhred/training.hpp"

namespace fh::cli {

namespace fs = std::filesystem;

namespace {

/// Config file plus per-key flag overrides attached to a subcommand.
struct ConfigFlags {
  std::string config_file;
  bool dump = false;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "flat key = value config file");
    app.add_flag("--dump-config", dump, "print the resolved configuration and exit");
    for (const ConfigKey& k : config_keys()) {
      options[k.name] = app.add_option("--" + k.name, values[k.name], k.help);
    }
  }

  std::vector<std::pair<std::string, std::string>> overrides() const {
    std::vector<std::pair<std::string, std::string>> out;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open config file " + config_file);
      std::stringstream ss;
      ss << in.rdbuf();
      out = parse_config_text(ss.str(), config_file);
    }
    for (const auto& [name, opt] : options) {
      if (opt->count() > 0) out.emplace_back(name, values.at(name));
    }
    return out;
  }

  /// base entries (e.g. from a checkpoint), then file, then flags.
  RunConfig resolve(std::vector<std::pair<std::string, std::string>> base = {}) const {
    const auto extra = overrides();
    base.insert(base.end(), extra.begin(), extra.end());
    RunConfig cfg = resolve_config(base);
    cfg.validate();
    return cfg;
  }
};

/// Output directory that is deleted again unless commit() is called.
class OutputDir {
 public:
  explicit OutputDir(const RunConfig& cfg) {
    if (!cfg.out.empty()) {
      path_ = cfg.out;
    } else {
      const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
      std::tm tm{};
      gmtime_r(&now, &tm);
      char stamp[32];
      std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
      path_ = fs::path("run") / (std::string(stamp) + "-" + cfg.tag);
    }
    created_ = !fs::exists(path_);
    fs::create_directories(path_);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;
  ~OutputDir() {
    if (!committed_ && created_) {
      std::error_code ec;
      fs::remove_all(path_, ec);
    }
  }
  const fs::path& path() const { return path_; }
  void commit() { committed_ = true; }

 private:
  fs::path path_;
  bool created_ = false;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<std::pair<std::string, std::string>> entries_of(const std::string& config_text) {
  return parse_config_text(config_text, "checkpoint config");
}

bool needs_features(const ModelConfig& m) { return m.use_video || m.use_audio; }

struct Prepared {
  Dataset dataset;
  Vocabulary vocab;
  std::vector<DialogueExample> train, valid;
  std::optional<Tensor> embeddings;
};

Prepared prepare_training(const RunConfig& cfg, std::ostream& err) {
  Prepared p;
  std::vector<std::string> warnings;
  p.dataset = load_dataset(cfg.data_dir, &warnings);
  for (const std::string& w : warnings) err << "warning: " << w << "\n";
  if (!p.dataset.has("train") || !p.dataset.has("valid")) {
    throw DataError(cfg.data_dir + ": training needs train.json and valid.json");
  }
  p.vocab = build_vocab(p.dataset.split("train"), cfg.min_count);
  const FeatureStore store(cfg.data_dir);
  const FeatureStore* features = needs_features(cfg.model) ? &store : nullptr;
  p.train = make_examples(p.dataset.split("train"), p.vocab, cfg.model, features);
  p.valid = make_examples(p.dataset.split("valid"), p.vocab, cfg.model, features);
  if (!cfg.embeddings.empty()) {
    Rng rng(derive_seed(cfg.train.seed, 7));
    const EmbeddingTable t = load_embeddings(cfg.embeddings, p.vocab, rng, cfg.model.embed_dim);
    err << "embeddings: " << t.hits << " of " << p.vocab.size() << " tokens covered\n";
    p.embeddings = t.matrix;
  }
  for (const auto& [name, dialogues] : p.dataset.splits) {
    err << name << ": " << dialogues.size() << " dialogues\n";
  }
  return p;
}

struct TrainOutcome {
  TrainResult result;
  std::size_t film_params = 0;
};

TrainOutcome run_training(const RunConfig& cfg, const Prepared& p, std::ostream& err,
                          std::ostream* history = nullptr) {
  Model model(cfg.model, p.vocab.size(), cfg.train.seed);
  if (p.embeddings) model.set_embeddings(*p.embeddings);
  TrainOutcome o;
  o.film_params = film_parameter_count(model);
  o.result = train(cfg.train, model, p.train, p.valid, p.vocab, dump_config(cfg), [&](const EpochRecord& r) {
    nlohmann::json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_bleu4", r.val_bleu4}};
    err << "epoch " << r.epoch << " train_loss " << r.train_loss << " val_bleu4 " << r.val_bleu4 << "\n";
    if (history) *history << j.dump() << "\n";
  });
  return o;
}

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_train(const ConfigFlags& flags, bool search, std::ostream& out, std::ostream& err) {
  RunConfig cfg = flags.resolve();
  const Prepared p = prepare_training(cfg, err);
  OutputDir dir(cfg);

  if (search) {
    std::ofstream report(dir.path() / "search.tsv");
    report << "rank\ttrial\tlr\thidden\tretain\tval_bleu4\n";
    const auto trials = random_search(cfg.search, cfg.search_budget, derive_seed(cfg.train.seed, 11), cfg.model,
                                      cfg.train, [&](const ModelConfig& mc, const TrainConfig& tc) {
                                        RunConfig trial = cfg;
                                        trial.model = mc;
                                        trial.train = tc;
                                        return run_training(trial, p, err).result.best.best_bleu4;
                                      });
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const Trial& t = trials[i];
      report << i + 1 << "\t" << t.index << "\t" << t.lr << "\t" << t.hidden << "\t" << t.retain << "\t"
             << fixed6(t.val_bleu4) << "\n";
    }
    cfg.model.hidden = trials.front().hidden;
    cfg.model.retain = trials.front().retain;
    cfg.train.optimizer.lr = trials.front().lr;
  }

  write_text(dir.path() / "config.snapshot", dump_config(cfg));
  std::ofstream history(dir.path() / "history.ndlines");
  const TrainOutcome o = run_training(cfg, p, err, &history);
  save_checkpoint(dir.path() / "checkpoint", o.result.best);
  dir.commit();
  out << "best val BLEU-4 " << fixed6(o.result.best.best_bleu4) << " at epoch " << o.result.best.best_epoch << "\n";
  out << "output " << dir.path().string() << "\n";
  return kExitOk;
}

struct Variant {
  std::string group;
  std::string label;
  bool video;
  bool audio;
  DescriptionSource description;

  std::string slug() const {
    std::string s;
    for (char c : label) {
      if (c != ' ') s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (label.rfind("Attention", 0) == 0) s = "full";
    return group + "/" + s;
  }
};

std::vector<Variant> ablation_variants() {
  using D = DescriptionSource;
  return {
      {"caption", "Attention + I3D + VGGish + Caption", true, true, D::kCaption},
      {"caption", "-Caption", true, true, D::kNone},
      {"caption", "-Caption -VGGish", true, false, D::kNone},
      {"caption", "-I3D -VGGish", false, false, D::kCaption},
      {"caption", "-I3D -Caption", false, true, D::kNone},
      {"summary", "Attention + I3D + VGGish + Summary", true, true, D::kSummary},
      {"summary", "-VGGish", true, false, D::kSummary},
      {"summary", "-I3D -VGGish", false, false, D::kSummary},
      {"summary", "-I3D", false, true, D::kSummary},
  };
}

int cmd_ablate(const ConfigFlags& flags, const std::string& selection, std::ostream& out, std::ostream& err) {
  const RunConfig base = flags.resolve();
  std::vector<Variant> variants;
  if (selection.empty()) {
    variants = ablation_variants();
  } else {
    std::stringstream ss(selection);
    std::string slug;
    while (std::getline(ss, slug, ',')) {
      bool found = false;
      for (const Variant& v : ablation_variants()) {
        if (v.slug() == slug) {
          variants.push_back(v);
          found = true;
        }
      }
      if (!found) {
        std::string known;
        for (const Variant& v : ablation_variants()) known += " " + v.slug();
        throw ConfigError("unknown ablation variant '" + slug + "'; known:" + known);
      }
    }
  }

  OutputDir dir(base);
  write_text(dir.path() / "config.snapshot", dump_config(base));
  std::ofstream table(dir.path() / "ablation.tsv");
  const std::string header = "group\tvariant\tslug\tfilm_bleu4\tnofilm_bleu4\tfilm_params_film\tfilm_params_nofilm\n";
  table << header;
  out << header;
  for (const Variant& v : variants) {
    std::string cells[2] = {"--", "--"};
    std::string params[2] = {"--", "--"};
    for (int film = 1; film >= 0; --film) {
      if (film && !v.video && !v.audio) continue;
      RunConfig cfg = base;
      cfg.model.use_video = v.video;
      cfg.model.use_audio = v.audio;
      cfg.model.description = v.description;
      cfg.model.use_aux = base.model.use_aux && v.video && v.description != DescriptionSource::kNone;
      cfg.model.encoder.use_film = film == 1;
      cfg.validate();
      err << "ablation " << v.slug() << (film ? " FiLM" : " NoFiLM") << "\n";
      const TrainOutcome o = run_training(cfg, prepare_training(cfg, err), err);
      cells[film ? 0 : 1] = fixed6(o.result.best.best_bleu4);
      params[film ? 0 : 1] = std::to_string(o.film_params);
    }
    const std::string row = v.group + "\t" + v.label + "\t" + v.slug() + "\t" + cells[0] + "\t" + cells[1] + "\t" +
                            params[0] + "\t" + params[1] + "\n";
    table << row;
    out << row;
  }
  dir.commit();
  out << "output " << dir.path().string() << "\n";
  return kExitOk;
}

struct LoadedModel {
  RunConfig cfg;
  Vocabulary vocab;
  std::unique_ptr<Model> model;
};

LoadedModel load_model(const ConfigFlags& flags, const std::string& checkpoint_path) {
  if (checkpoint_path.empty()) throw ConfigError("--checkpoint is required");
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  LoadedModel lm;
  lm.cfg = flags.resolve(entries_of(ckpt.config));
  lm.vocab = Vocabulary::from_tokens(ckpt.vocabulary);
  // architecture comes from the checkpoint, never from overrides
  const RunConfig stored = config_from_text(ckpt.config);
  lm.cfg.model = stored.model;
  lm.model = std::make_unique<Model>(lm.cfg.model, lm.vocab.size(), stored.train.seed);
  restore_parameters(*lm.model, ckpt);
  return lm;
}

void check_vocab(const LoadedModel& lm, const Dataset& ds) {
  if (!ds.has("train")) return;
  const Vocabulary rebuilt = build_vocab(ds.split("train"), lm.cfg.min_count);
  if (!(rebuilt == lm.vocab)) {
    throw DataError("vocabulary mismatch: the checkpoint was trained on a different train split (" +
                    std::to_string(lm.vocab.size()) + " vs " + std::to_string(rebuilt.size()) + " tokens)");
  }
}

DecodeOptions decode_options(const RunConfig& cfg) {
  DecodeOptions o;
  o.suppress_unk = cfg.suppress_unk;
  return o;
}

int cmd_generate(const ConfigFlags& flags, const std::string& checkpoint, const std::string& split,
                 std::ostream& out, std::ostream& err) {
  const LoadedModel lm = load_model(flags, checkpoint);
  const Dataset ds = load_dataset(lm.cfg.data_dir);
  check_vocab(lm, ds);
  const FeatureStore store(lm.cfg.data_dir);
  const std::vector<DialogueExample> examples =
      make_examples(ds.split(split), lm.vocab, lm.cfg.model, needs_features(lm.cfg.model) ? &store : nullptr);

  OutputDir dir(lm.cfg);
  std::ofstream answers(dir.path() / "answers.tsv");
  std::ofstream refs(dir.path() / "references.tsv");
  const std::vector<Dialogue>& dialogues = ds.split(split);
  for (std::size_t d = 0; d < examples.size(); ++d) {
    const auto decoded = decode_dialogue(*lm.model, examples[d], lm.cfg.beam_width, decode_options(lm.cfg));
    for (std::size_t t = 0; t < decoded.size(); ++t) {
      const std::string id = examples[d].video_id + "_" + std::to_string(t);
      write_segment(answers, id, lm.vocab.decode(decoded[t]));
      write_segment(refs, id, join_tokens(tokenize(dialogues[d].turns[t].answer)));
    }
  }
  write_text(dir.path() / "config.snapshot", dump_config(lm.cfg));
  answers.close();
  refs.close();
  dir.commit();
  err << "decoded " << examples.size() << " dialogues from split " << split << "\n";
  out << "output " << dir.path().string() << "\n";
  return kExitOk;
}

int cmd_score(const std::string& hyp, const std::string& ref, const std::string& baseline, std::ostream& out) {
  const MetricReport r = score_run(hyp, ref);
  out << r.format();
  if (!baseline.empty()) {
    const MetricReport b = score_run(baseline, ref);
    for (const char* m : {"BLEU-4", "CIDEr-D"}) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "relative %s\t%+.1f%%\n", m, 100.0 * relative_improvement(r.at(m), b.at(m)));
      out << buf;
    }
  }
  return kExitOk;
}

int cmd_demo(const ConfigFlags& flags, const std::string& checkpoint, const std::string& video_id,
             std::istream& in, std::ostream& out) {
  const LoadedModel lm = load_model(flags, checkpoint);
  const Dataset ds = load_dataset(lm.cfg.data_dir);
  const Dialogue* found = nullptr;
  std::vector<std::string> ids;
  for (const auto& [name, dialogues] : ds.splits) {
    for (const Dialogue& d : dialogues) {
      ids.push_back(d.video_id);
      if (d.video_id == video_id && !found) found = &d;
    }
  }
  if (!found) {
    std::string msg = "unknown video id '" + video_id + "'; available:";
    for (std::size_t i = 0; i < ids.size() && i < 50; ++i) msg += " " + ids[i];
    if (ids.size() > 50) msg += " ... (" + std::to_string(ids.size()) + " total)";
    throw DataError(msg);
  }
  Dialogue shell = *found;
  shell.turns.clear();
  const FeatureStore store(lm.cfg.data_dir);
  const DialogueExample ex =
      make_example(shell, lm.vocab, lm.cfg.model, needs_features(lm.cfg.model) ? &store : nullptr);

  Tape tape(false);
  DialogueTracker tracker(*lm.model, tape, ex, RunContext{});
  out << "video " << video_id << ": " << found->caption << "\n";
  std::string line;
  while (true) {
    out << "> " << std::flush;
    if (!std::getline(in, line)) break;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    line = line.substr(b, line.find_last_not_of(" \t\r") - b + 1);
    if (line == "quit") break;
    const std::vector<int> q = lm.vocab.encode_text(line);
    const Tensor ctx = tracker.ask(q).context.value();
    const Hypothesis h = lm.cfg.beam_width == 0
                             ? greedy_decode(lm.model->answer_decoder(), ctx, decode_options(lm.cfg))
                             : beam_search(lm.model->answer_decoder(), ctx, lm.cfg.beam_width, decode_options(lm.cfg)).best;
    std::vector<int> answer = h.answer();
    out << lm.vocab.decode(answer) << "\n";
    answer.push_back(Vocabulary::kEos);
    tracker.answer(answer);
  }
  out << "\n" << tracker.utterance_count() << " utterances in history\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"FiLM-conditioned audio-visual hierarchical dialogue model", "film-hred"};
  app.require_subcommand(1);

  ConfigFlags train_flags, ablate_flags, gen_flags, demo_flags;
  bool search = false;
  CLI::App* train = app.add_subcommand("train", "train a model and keep the best checkpoint");
  train_flags.attach(*train);
  train->add_flag("--search", search, "random search over lr, hidden and retain first");

  std::string variants;
  CLI::App* ablate = app.add_subcommand("ablate", "train the ablation grid with and without FiLM");
  ablate_flags.attach(*ablate);
  ablate->add_option("--variants", variants, "comma-separated variant slugs (default: all)");

  std::string checkpoint, split = "test";
  CLI::App* gen = app.add_subcommand("generate", "decode answers for a split");
  gen_flags.attach(*gen);
  gen->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  gen->add_option("--split", split, "dataset split to decode");

  std::string hyp, ref, baseline;
  CLI::App* score = app.add_subcommand("score", "score answers against references");
  score->add_option("candidates", hyp, "segment_id<TAB>answer file")->required();
  score->add_option("references", ref, "segment_id<TAB>reference file")->required();
  score->add_option("--baseline", baseline, "baseline answers; prints relative BLEU-4 and CIDEr-D gains");

  std::string video_id;
  CLI::App* demo = app.add_subcommand("demo", "interactive question answering about one video");
  demo_flags.attach(*demo);
  demo->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  demo->add_option("--video", video_id, "video id")->required();

  SynthOptions so;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", so.seed, "generator seed");
  synth->add_option("--dialogues", so.dialogues, "training dialogues");
  synth->add_option("--valid", so.valid, "validation dialogues (0: dialogues/4, at least 2)");
  synth->add_option("--test", so.test, "test dialogues (0: dialogues/4, at least 2)");
  synth->add_option("--vocab", so.vocab_size, "distinct words, >= 10");
  synth->add_option("--turns", so.turns, "question/answer turns per dialogue");
  synth->add_option("--video-rows", so.video_rows, "rows per video track");
  synth->add_option("--video-dim", so.video_dim, "video feature width");
  synth->add_option("--audio-rows", so.audio_rows, "rows per audio track");
  synth->add_option("--audio-dim", so.audio_dim, "audio feature width");

  std::vector<std::string> argv_storage{"film-hred"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : argv_storage) argv.push_back(s.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return kExitOk;
      err << "film-hred: " << e.what() << "\n" << app.help();
      return kExitUsage;
    }

    for (auto [sub, flags] : {std::pair{train, &train_flags}, std::pair{ablate, &ablate_flags},
                              std::pair{gen, &gen_flags}, std::pair{demo, &demo_flags}}) {
      if (sub->parsed() && flags->dump) {
        out << dump_config(flags->resolve());
        return kExitOk;
      }
    }
    if (train->parsed()) return cmd_train(train_flags, search, out, err);
    if (ablate->parsed()) return cmd_ablate(ablate_flags, variants, out, err);
    if (gen->parsed()) return cmd_generate(gen_flags, checkpoint, split, out, err);
    if (score->parsed()) return cmd_score(hyp, ref, baseline, out);
    if (demo->parsed()) return cmd_demo(demo_flags, checkpoint, video_id, in, out);
    if (synth->parsed()) {
      const SynthData data = synthesize_dataset(so);
      write_synth_data(synth_out, data);
      for (const auto& [name, dialogues] : data.dataset.splits) {
        out << name << ": " << dialogues.size() << " dialogues\n";
      }
      return kExitOk;
    }
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace fh::cli
