// SPDX-License-Identifier: Apache-2.0

#include "filmhred/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "filmhred/errors.hpp"

namespace fh {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  ConfigKey key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};


template <typename Get>
Entry make(std::string name, std::string help, Get ref) {
  Entry e;
  e.key = {name, std::move(help)};
  e.get = [ref](const RunConfig& c) -> std::string {
    auto& field = ref(const_cast<RunConfig&>(c));
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, bool>) return field ? "true" : "false";
    else if constexpr (std::is_same_v<T, double>) return fmt_double(field);
    else if constexpr (std::is_same_v<T, std::string>) return field;
    else return std::to_string(field);
  };
  e.set = [ref, name](RunConfig& c, const std::string& v) {
    auto& field = ref(c);
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, bool>) field = parse_bool(name, v);
    else if constexpr (std::is_same_v<T, double>) field = parse_double(name, v);
    else if constexpr (std::is_same_v<T, std::string>) field = v;
    else field = static_cast<T>(parse_uint(name, v));
  };
  return e;
}

#define FH_FIELD(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> r;
    r.push_back(make("task", "preset: 1.a.i | 1.a.ii | 2.a.i | 2.a.ii (empty for none)", FH_FIELD(c.task)));
    r.push_back(make("data_dir", "dataset directory (train/valid/test.json + features/)", FH_FIELD(c.data_dir)));
    r.push_back(make("embeddings", "GloVe-style embedding file (empty: random init)", FH_FIELD(c.embeddings)));
    r.push_back(make("out", "output directory (empty: run/<timestamp>-<tag>)", FH_FIELD(c.out)));
    r.push_back(make("tag", "run tag used in the output directory name", FH_FIELD(c.tag)));
    r.push_back(make("min_count", "minimum token count for the vocabulary", FH_FIELD(c.min_count)));
    r.push_back(make("embed_dim", "word embedding width", FH_FIELD(c.model.embed_dim)));
    r.push_back(make("hidden", "text LSTM and decoder width", FH_FIELD(c.model.hidden)));
    r.push_back(make("modality_hidden", "video/audio LSTM width (0: hidden)", FH_FIELD(c.model.modality_hidden)));
    r.push_back(make("attention_dim", "attention projection width (0: hidden)", FH_FIELD(c.model.attention_dim)));
    r.push_back(make("segments", "video segments L on the FiLM path", FH_FIELD(c.model.encoder.segments)));
    r.push_back(make("film_blocks", "FiLM blocks per modality", FH_FIELD(c.model.encoder.film_blocks)));
    r.push_back(make("film_hidden", "FiLM block width", FH_FIELD(c.model.encoder.film_hidden)));
    r.push_back(make("fc_dim", "layer after the FiLM blocks (0: film_hidden)", FH_FIELD(c.model.encoder.fc_dim)));
    r.push_back(make("video_dim", "video feature width", FH_FIELD(c.model.encoder.video_dim)));
    r.push_back(make("audio_dim", "audio feature width", FH_FIELD(c.model.encoder.audio_dim)));
    r.push_back(make("use_film", "condition video/audio features with FiLM", FH_FIELD(c.model.encoder.use_film)));
    r.push_back(make("use_i3d", "use video (I3D) features", FH_FIELD(c.model.use_video)));
    r.push_back(make("use_vggish", "use audio (VGGish) features", FH_FIELD(c.model.use_audio)));
    {
      Entry e;
      e.key = {"description", "caption | summary | both | none"};
      e.get = [](const RunConfig& c) { return to_string(c.model.description); };
      e.set = [](RunConfig& c, const std::string& v) { c.model.description = parse_description_source(v); };
      r.push_back(std::move(e));
    }
    r.push_back(make("use_aux", "auxiliary description decoder", FH_FIELD(c.model.use_aux)));
    r.push_back(make("aux_weight", "weight of the auxiliary loss", FH_FIELD(c.model.aux_weight)));
    r.push_back(make("retain", "dropout keep probability", FH_FIELD(c.model.retain)));
    r.push_back(make("sampler_threshold", "scheduled sampling threshold", FH_FIELD(c.model.sampler_threshold)));
    r.push_back(make("scheduled_sampling", "false: pure teacher forcing", FH_FIELD(c.train.scheduled_sampling)));
    r.push_back(make("lr", "AMSGrad learning rate", FH_FIELD(c.train.optimizer.lr)));
    r.push_back(make("beta1", "AMSGrad beta1", FH_FIELD(c.train.optimizer.beta1)));
    r.push_back(make("beta2", "AMSGrad beta2", FH_FIELD(c.train.optimizer.beta2)));
    r.push_back(make("eps", "AMSGrad epsilon", FH_FIELD(c.train.optimizer.eps)));
    r.push_back(make("clip_norm", "global gradient norm limit", FH_FIELD(c.train.clip_norm)));
    r.push_back(make("batch_size", "dialogues per update", FH_FIELD(c.train.batch_size)));
    r.push_back(make("max_epochs", "epoch limit", FH_FIELD(c.train.max_epochs)));
    r.push_back(make("patience", "epochs without validation gain before stopping", FH_FIELD(c.train.patience)));
    r.push_back(make("seed", "seed for initialisation, dropout, sampling and shuffling", FH_FIELD(c.train.seed)));
    r.push_back(make("beam_width", "beam width for generation (0: greedy)", FH_FIELD(c.beam_width)));
    r.push_back(make("suppress_unk", "never emit <unk> when decoding", FH_FIELD(c.suppress_unk)));
    r.push_back(make("search_budget", "random search trials", FH_FIELD(c.search_budget)));
    r.push_back(make("search_lr_min", "random search: lowest lr", FH_FIELD(c.search.lr_min)));
    r.push_back(make("search_lr_max", "random search: highest lr", FH_FIELD(c.search.lr_max)));
    {
      Entry e;
      e.key = {"search_hidden", "random search: comma-separated hidden sizes"};
      e.get = [](const RunConfig& c) {
        std::string s;
        for (std::size_t i = 0; i < c.search.hidden.size(); ++i) s += (i ? "," : "") + std::to_string(c.search.hidden[i]);
        return s;
      };
      e.set = [](RunConfig& c, const std::string& v) {
        std::vector<std::size_t> sizes;
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
          item = trim(item);
          if (!item.empty()) sizes.push_back(parse_uint("search_hidden", item));
        }
        c.search.hidden = sizes;
      };
      r.push_back(std::move(e));
    }
    r.push_back(make("search_retain_min", "random search: lowest retain", FH_FIELD(c.search.retain_min)));
    r.push_back(make("search_retain_max", "random search: highest retain", FH_FIELD(c.search.retain_max)));
    return r;
  }();
  return entries;
}

#undef FH_FIELD

const Entry& find_entry(const std::string& key) {
  for (const Entry& e : registry()) {
    if (e.key.name == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (!task.empty()) {
    bool known = false;
    for (const auto& p : preset_names()) known = known || p == task;
    if (!known) throw ConfigError("unknown task preset '" + task + "'");
  }
}

RunConfig default_config() {
  RunConfig c;
  const char* root = std::getenv(kDataRootEnv);
  c.data_dir = root && *root ? root : "data";
  return c;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const Entry& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_entry(key).set(cfg, value);
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const Entry& e : registry()) out += e.key.name + " = " + e.get(cfg) + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    try {
      find_entry(key);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<std::string> preset_names() { return {"1.a.i", "1.a.ii", "2.a.i", "2.a.ii"}; }

void apply_preset(RunConfig& cfg, const std::string& task) {
  ModelConfig& m = cfg.model;
  if (task == "1.a.i" || task == "1.a.ii") {
    m.use_video = true;
    m.use_audio = true;
    m.use_aux = true;
    m.description = task == "1.a.i" ? DescriptionSource::kCaption : DescriptionSource::kSummary;
  } else if (task == "2.a.i" || task == "2.a.ii") {
    m.use_video = false;
    m.use_audio = false;
    m.use_aux = false;  // the auxiliary decoder reads the video state
    m.description = task == "2.a.i" ? DescriptionSource::kCaption : DescriptionSource::kSummary;
  } else {
    throw ConfigError("unknown task preset '" + task + "' (expected 1.a.i, 1.a.ii, 2.a.i or 2.a.ii)");
  }
  cfg.task = task;
}

RunConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& entries) {
  RunConfig cfg = default_config();
  std::string task;
  for (const auto& [k, v] : entries) {
    if (k == "task") task = v;
  }
  if (!task.empty()) apply_preset(cfg, task);
  for (const auto& [k, v] : entries) set_config_value(cfg, k, v);
  return cfg;
}

RunConfig config_from_text(const std::string& text) { return resolve_config(parse_config_text(text)); }

}  // namespace fh
