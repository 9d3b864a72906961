// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "filmhred/checkpoint.hpp"
#include "filmhred/corpus.hpp"
#include "filmhred/dataset.hpp"
#include "filmhred/embeddings.hpp"
#include "filmhred/errors.hpp"
#include "filmhred/features.hpp"
#include "filmhred/synth.hpp"
#include "filmhred/vocab.hpp"
#include "oracles.hpp"

namespace fh {
namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename F>
FormatError::Kind format_kind(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected FormatError";
  return FormatError::Kind::kMalformed;
}

// ---- vocabulary ----

TEST(Vocabulary, MinCountFilters) {
  const std::vector<std::string> texts{"a a b"};
  const Vocabulary v = build_vocab_from_texts(texts, 2);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
  EXPECT_EQ(v.id("b"), Vocabulary::kUnk);
}

TEST(Vocabulary, ReservedTokensComeFirst) {
  const Vocabulary v;
  EXPECT_EQ(v.size(), Vocabulary::kReserved);
  EXPECT_EQ(v.token(Vocabulary::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocabulary::kSos), "<sos>");
  EXPECT_EQ(v.token(Vocabulary::kEos), "<eos>");
  EXPECT_EQ(v.token(Vocabulary::kUnk), "<unk>");
}

TEST(Vocabulary, IdTokenIdIdentityAndOrdering) {
  const std::vector<std::string> texts{"the dog sees the cat", "The cat, the dog!", "zebra"};
  const Vocabulary v = build_vocab_from_texts(texts, 1);
  for (std::size_t id = 0; id < v.size(); ++id) EXPECT_EQ(v.id(v.token(static_cast<int>(id))), static_cast<int>(id));
  // Count desc then token asc: the(4) cat(2) dog(2) then singletons sorted.
  EXPECT_EQ(v.token(4), "the");
  EXPECT_EQ(v.token(5), "cat");
  EXPECT_EQ(v.token(6), "dog");
  EXPECT_EQ(v.token(7), "!");
  EXPECT_EQ(v, build_vocab_from_texts(texts, 1));
  EXPECT_EQ(Vocabulary::from_tokens(v.tokens()), v);
}

TEST(Vocabulary, EncodeDecode) {
  const std::vector<std::string> texts{"he opens the door"};
  const Vocabulary v = build_vocab_from_texts(texts, 1);
  const std::vector<int> ids = v.encode_text("He opens the window");
  EXPECT_EQ(ids.back(), Vocabulary::kEos);
  EXPECT_EQ(ids[3], Vocabulary::kUnk);
  EXPECT_EQ(v.decode(ids), "he opens the <unk>");
  EXPECT_THROW(v.token(99), Error);
}

// ---- dataset ----

Dialogue sample_dialogue(const std::string& id, bool summary) {
  Dialogue d;
  d.video_id = id;
  d.caption = "A man walks in. He sits down.";
  if (summary) d.summary = "a man sits";
  d.turns = {{"Is there sound?", "Yes, music."}, {"What colour is the \"chair\"?", "It's red \\ blue."}};
  return d;
}

TEST(Dataset, RoundtripIsStructurallyExact) {
  const std::vector<Dialogue> split{sample_dialogue("v1", true), sample_dialogue("v2", false)};
  const std::vector<Dialogue> back = parse_split(serialize_split(split));
  EXPECT_EQ(back, split);
}

TEST(Dataset, SchemaErrorsCarryAPointer) {
  const std::string bad = R"({"dialogs":[{"video_id":"x","caption":"c","dialog":[{"question":"q","answer":3}]}]})";
  try {
    parse_split(bad, "bad.json");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("/dialogs/0/dialog/0/answer"), std::string::npos) << e.what();
  }
}

TEST(Dataset, SyntaxErrorsCarryALine) {
  try {
    parse_split("{\n\"dialogs\": [\n,\n]}", "broken.json");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Dataset, EmptyDialogueListIsAnError) {
  EXPECT_THROW(parse_split(R"({"dialogs":[]})"), DataError);
  EXPECT_THROW(parse_split(R"({"dialogs":[{"video_id":"x","caption":"c","dialog":[]}]})"), DataError);
  EXPECT_THROW(parse_split(R"({"dialogues":[]})"), DataError);
}

TEST(Dataset, ImageIdAliasAndTurnCountWarning) {
  const std::string doc = R"({"dialogs":[{"image_id":"abc","caption":"c","dialog":[{"question":"q","answer":"a"}]}]})";
  std::vector<std::string> warnings;
  const std::vector<Dialogue> d = parse_split(doc, "alias.json", &warnings);
  EXPECT_EQ(d.at(0).video_id, "abc");
  EXPECT_FALSE(warnings.empty());
}

TEST(Dataset, LoadsSplitsFromADirectory) {
  const std::filesystem::path dir = testing::scratch_dir("dataset");
  save_split(dir / "train.json", {sample_dialogue("v1", true)});
  save_split(dir / "valid.json", {sample_dialogue("v2", true), sample_dialogue("v3", false)});
  const Dataset ds = load_dataset(dir);
  EXPECT_EQ(ds.split("train").size(), 1u);
  EXPECT_EQ(ds.split("valid").size(), 2u);
  EXPECT_FALSE(ds.has("test"));
  EXPECT_THROW(ds.split("test"), DataError);
  EXPECT_THROW(load_dataset(testing::scratch_dir("dataset_empty")), DataError);
}

TEST(Dataset, DescriptionSources) {
  const Dialogue d = sample_dialogue("v", true);
  const Vocabulary v = build_vocab({d}, 1);
  const std::vector<int> cap = description_ids(d, DescriptionSource::kCaption, v);
  const std::vector<int> sum = description_ids(d, DescriptionSource::kSummary, v);
  std::vector<int> both = cap;
  both.insert(both.end(), sum.begin(), sum.end());
  EXPECT_EQ(description_ids(d, DescriptionSource::kBoth, v), both);
  EXPECT_TRUE(description_ids(d, DescriptionSource::kNone, v).empty());
  EXPECT_THROW(description_ids(sample_dialogue("w", false), DescriptionSource::kSummary, v), DataError);
}

// ---- features ----

FeatureTrack random_track(Modality m, std::size_t rows, std::size_t dims, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  FeatureTrack t{m, rows, dims, {}, false};
  t.values.resize(rows * dims);
  for (float& x : t.values) x = g(rng);
  return t;
}

TEST(Features, VideoTrackRoundtripsExactly) {
  const FeatureTrack t = random_track(Modality::kVideo, 30, 1024, 1);
  const FeatureTrack back = decode_features(encode_features(t));
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.modality, Modality::kVideo);
}

TEST(Features, AudioModalityFromDimsAndDirectory) {
  const FeatureTrack t = random_track(Modality::kAudio, 7, 128, 2);
  EXPECT_EQ(decode_features(encode_features(t)).modality, Modality::kAudio);
  const std::filesystem::path dir = testing::scratch_dir("features");
  const FeatureStore store(dir);
  store.save("clip", t);
  EXPECT_TRUE(store.has(Modality::kAudio, "clip"));
  EXPECT_FALSE(store.has(Modality::kVideo, "clip"));
  EXPECT_EQ(store.path(Modality::kAudio, "clip"), dir / "features" / "audio" / "clip.mmf1");
  EXPECT_EQ(store.load(Modality::kAudio, "clip"), t);
  // Odd dims rely on the directory tag.
  const FeatureTrack odd = random_track(Modality::kAudio, 3, 5, 3);
  store.save("odd", odd);
  EXPECT_EQ(read_features(store.path(Modality::kAudio, "odd")).modality, Modality::kAudio);
}

TEST(Features, CorruptionIsClassified) {
  const std::vector<std::uint8_t> good = encode_features(random_track(Modality::kVideo, 4, 1024, 4));
  std::vector<std::uint8_t> bytes = good;
  bytes[0] = 'X';
  EXPECT_EQ(format_kind([&] { decode_features(bytes); }), FormatError::Kind::kBadMagic);
  bytes = good;
  bytes.resize(bytes.size() / 2);
  EXPECT_EQ(format_kind([&] { decode_features(bytes); }), FormatError::Kind::kTruncated);
  bytes = good;
  bytes[40] ^= 0x10;
  EXPECT_EQ(format_kind([&] { decode_features(bytes); }), FormatError::Kind::kChecksum);
  bytes = std::vector<std::uint8_t>(good.begin(), good.begin() + 3);
  EXPECT_EQ(format_kind([&] { decode_features(bytes); }), FormatError::Kind::kTruncated);
}

TEST(Features, EveryByteFlipIsDetected) {
  const std::vector<std::uint8_t> good = encode_features(random_track(Modality::kAudio, 2, 128, 5));
  for (std::size_t i = 0; i < good.size(); i += 7) {
    std::vector<std::uint8_t> bytes = good;
    bytes[i] ^= 0x01;
    EXPECT_THROW(decode_features(bytes), FormatError) << "byte " << i;
  }
}

TEST(Features, MissingFileIsADataError) {
  const FeatureStore store(testing::scratch_dir("features_missing"));
  EXPECT_THROW(store.load(Modality::kVideo, "nope"), DataError);
}

TEST(Resample, IdentityRepeatAndStride) {
  const FeatureTrack t30 = random_track(Modality::kVideo, 30, 8, 6);
  EXPECT_EQ(resample_track(t30, 30), t30);
  const FeatureTrack one = random_track(Modality::kVideo, 1, 8, 7);
  const FeatureTrack rep = resample_track(one, 30);
  ASSERT_EQ(rep.rows, 30u);
  for (std::size_t r = 0; r < 30; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(rep.at(r, c), one.at(0, c));
  const FeatureTrack t60 = random_track(Modality::kVideo, 60, 8, 8);
  const FeatureTrack half = resample_track(t60, 30);
  for (std::size_t r = 0; r < 30; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(half.at(r, c), t60.at(2 * r, c));
  EXPECT_THROW(resample_track(t60, 0), DataError);
}

TEST(Features, ZeroTrackIsFlagged) {
  const FeatureTrack z = zero_track(Modality::kAudio, 128);
  EXPECT_EQ(z.rows, 1u);
  EXPECT_TRUE(z.synthetic_fill);
  EXPECT_TRUE(std::all_of(z.values.begin(), z.values.end(), [](float v) { return v == 0.0f; }));
}

TEST(Features, Crc32KnownValue) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), 0xCBF43926u);
}

// ---- embeddings ----

TEST(Embeddings, HitsCopiedMissesInRangeCoverageCounted) {
  const std::vector<std::string> texts{"cat dog bird"};
  const Vocabulary v = build_vocab_from_texts(texts, 1);  // 4 reserved + 3 words
  std::istringstream file("cat 0.25 -1.5 3\nfish 1 1 1\ndog 0.125 0 -0.5\n");
  Rng rng(1);
  const EmbeddingTable t = load_embeddings(file, v, rng, 3);
  EXPECT_EQ(t.hits, 2u);
  EXPECT_DOUBLE_EQ(t.coverage, 2.0 / 7.0);
  const std::size_t cat = static_cast<std::size_t>(v.id("cat"));
  EXPECT_EQ(t.matrix.at(cat, 0), 0.25);
  EXPECT_EQ(t.matrix.at(cat, 1), -1.5);
  EXPECT_EQ(t.matrix.at(cat, 2), 3.0);
  const std::size_t bird = static_cast<std::size_t>(v.id("bird"));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_GT(t.matrix.at(bird, c), -0.08);
    EXPECT_LT(t.matrix.at(bird, c), 0.08);
  }
}

TEST(Embeddings, WrongDimensionIsAnError) {
  const Vocabulary v = build_vocab_from_texts(std::vector<std::string>{"cat"}, 1);
  std::istringstream file("cat 0.1 0.2\n");
  Rng rng(1);
  EXPECT_THROW(load_embeddings(file, v, rng, 300), DataError);
  std::istringstream junk("cat 0.1 zz 0.3\n");
  EXPECT_THROW(load_embeddings(junk, v, rng, 3), DataError);
}

// ---- checkpoints ----

Checkpoint sample_checkpoint() {
  Rng rng(9);
  Checkpoint c;
  c.parameters = {{"a.weight", Tensor::uniform({3, 4}, -1, 1, rng)}, {"a.bias", Tensor::uniform({3}, -1, 1, rng)}};
  c.optimizer = {{"m/a.bias", Tensor::uniform({3}, -1, 1, rng)}};
  c.optimizer_steps = 17;
  c.config = "hidden = 3\n";
  c.vocabulary = Vocabulary().tokens();
  c.best_bleu4 = 0.123456789012345;
  c.best_epoch = 4;
  return c;
}

TEST(Checkpoint, RoundtripIsBitwiseAndIdempotent) {
  const Checkpoint c = sample_checkpoint();
  const std::filesystem::path dir = testing::scratch_dir("checkpoint");
  save_checkpoint(dir / "a.fhck", c);
  const Checkpoint back = load_checkpoint(dir / "a.fhck");
  EXPECT_EQ(back, c);
  save_checkpoint(dir / "b.fhck", back);
  EXPECT_EQ(read_bytes(dir / "a.fhck"), read_bytes(dir / "b.fhck"));
}

TEST(Checkpoint, CorruptionIsClassified) {
  const std::vector<std::uint8_t> good = encode_checkpoint(sample_checkpoint());
  std::vector<std::uint8_t> b = good;
  b[1] = 'Z';
  EXPECT_EQ(format_kind([&] { decode_checkpoint(b); }), FormatError::Kind::kBadMagic);
  b = good;
  b[4] = 9;  // version
  EXPECT_EQ(format_kind([&] { decode_checkpoint(b); }), FormatError::Kind::kVersionMismatch);
  b = good;
  b.resize(good.size() - 11);
  EXPECT_EQ(format_kind([&] { decode_checkpoint(b); }), FormatError::Kind::kTruncated);
  b = good;
  b[good.size() - 20] ^= 0xff;
  EXPECT_EQ(format_kind([&] { decode_checkpoint(b); }), FormatError::Kind::kChecksum);
}

TEST(Checkpoint, MissingFileIsADataError) {
  EXPECT_THROW(load_checkpoint(testing::scratch_dir("ckpt_missing") / "none.fhck"), DataError);
}

// ---- synthetic generator ----

TEST(Synth, SameSeedSameBytes) {
  SynthOptions o;
  o.dialogues = 6;
  o.video_dim = 16;
  o.audio_dim = 8;
  const std::filesystem::path a = testing::scratch_dir("synth_a"), b = testing::scratch_dir("synth_b");
  write_synth_data(a, synthesize_dataset(o));
  write_synth_data(b, synthesize_dataset(o));
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const std::filesystem::path rel = std::filesystem::relative(entry.path(), a);
    EXPECT_EQ(read_bytes(entry.path()), read_bytes(b / rel)) << rel;
  }
}

TEST(Synth, SixteenDialoguesThreeTurnsGiveFortyEightPairs) {
  SynthOptions o;
  o.dialogues = 16;
  o.vocab_size = 50;
  o.turns = 3;
  const SynthData d = synthesize_dataset(o);
  std::size_t pairs = 0;
  for (const Dialogue& dlg : d.dataset.split("train")) pairs += dlg.turns.size();
  EXPECT_EQ(pairs, 48u);
  EXPECT_EQ(d.video.at(d.dataset.split("train")[0].video_id).dims, kVideoFeatureDim);
  EXPECT_LE(build_vocab(d.dataset.split("train"), 1).size(), 50u + Vocabulary::kReserved);
}

TEST(Synth, AnswersDependOnTheVideoTrack) {
  SynthOptions o;
  o.dialogues = 4;
  o.video_dim = 16;
  o.audio_dim = 8;
  const SynthData d = synthesize_dataset(o);
  const FeatureTrack& track = d.video.begin()->second;
  for (std::size_t topic = 0; topic < d.lexicon.topics.size(); ++topic) {
    // Swap the topic channel with a channel of the opposite polarity.
    const std::string before = synth_answer(d.lexicon, topic, track);
    for (std::size_t other = 0; other < d.lexicon.topics.size(); ++other) {
      if (synth_answer(d.lexicon, other, track).substr(0, 3) == before.substr(0, 3)) continue;
      FeatureTrack permuted = track;
      for (std::size_t r = 0; r < track.rows; ++r) std::swap(permuted.values[r * track.dims + topic], permuted.values[r * track.dims + other]);
      EXPECT_NE(synth_answer(d.lexicon, topic, permuted), before);
      break;
    }
  }
}

TEST(Synth, RoundtripsThroughTheLoaders) {
  SynthOptions o;
  o.dialogues = 5;
  o.video_dim = 16;
  o.audio_dim = 8;
  const SynthData d = synthesize_dataset(o);
  const std::filesystem::path dir = testing::scratch_dir("synth_rt");
  write_synth_data(dir, d);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.splits, d.dataset.splits);
  const FeatureStore store(dir);
  for (const auto& [id, t] : d.video) EXPECT_EQ(store.load(Modality::kVideo, id), t);
  for (const auto& [id, t] : d.audio) EXPECT_EQ(store.load(Modality::kAudio, id), t);
}

TEST(Synth, RejectsDegenerateOptions) {
  SynthOptions o;
  o.dialogues = 0;
  EXPECT_THROW(synthesize_dataset(o), ConfigError);
  o = SynthOptions{};
  o.vocab_size = 3;
  EXPECT_THROW(synthesize_dataset(o), ConfigError);
}

// ---- examples ----

TEST(Examples, FilmPathResamplesAndMissingAudioIsFilled) {
  SynthOptions o;
  o.dialogues = 2;
  o.video_rows = 7;
  o.video_dim = 6;
  o.audio_dim = 4;
  const SynthData d = synthesize_dataset(o);
  const std::filesystem::path dir = testing::scratch_dir("examples");
  write_synth_data(dir, d);
  const Dialogue& dlg = d.dataset.split("train")[0];
  std::filesystem::remove(FeatureStore(dir).path(Modality::kAudio, dlg.video_id));
  ModelConfig mc;
  mc.encoder.segments = 3;
  mc.encoder.video_dim = 6;
  mc.encoder.audio_dim = 4;
  const Vocabulary v = build_vocab(d.dataset.split("train"), 1);
  const FeatureStore store(dir);
  const DialogueExample ex = make_example(dlg, v, mc, &store);
  EXPECT_EQ(ex.video->shape(), (Shape{3, 6}));
  EXPECT_TRUE(ex.audio_filled);
  EXPECT_EQ(ex.audio->shape(), (Shape{1, 4}));
  EXPECT_EQ(ex.turns(), dlg.turns.size());
  for (const auto& q : ex.questions) EXPECT_EQ(q.back(), Vocabulary::kEos);
  std::filesystem::remove(store.path(Modality::kVideo, dlg.video_id));
  EXPECT_THROW(make_example(dlg, v, mc, &store), DataError);
}

}  // namespace
}  // namespace fh
