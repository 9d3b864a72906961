// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` run configuration shared by every command. Resolution
// order: built-in defaults, task preset, config file, command-line flags.

#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "filmhred/model.hpp"
#include "filmhred/training.hpp"

namespace fh {

/// Environment variable naming the default data root.
inline constexpr const char* kDataRootEnv = "FILM_HRED_DATA";

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SearchSpace search;
  std::size_t search_budget = 3;
  std::string task;  // preset name, empty when none
  std::string data_dir;
  std::string embeddings;  // GloVe-style text file, optional
  std::string out;         // output directory; empty means run/<timestamp>-<tag>
  std::string tag = "run";
  std::size_t min_count = 2;
  std::size_t beam_width = 5;
  bool suppress_unk = false;

  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Defaults, with data_dir taken from FILM_HRED_DATA when set.
RunConfig default_config();

const std::vector<ConfigKey>& config_keys();
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Every key as `key = value`, one per line, in registry order.
std::string dump_config(const RunConfig& cfg);

/// Parses `key = value` lines; '#' starts a comment. Unknown keys and
/// malformed lines are ConfigErrors carrying the line number.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                    const std::string& origin = "<config>");

/// Task presets: 1.a.i, 1.a.ii (video + audio, caption / summary) and
/// 2.a.i, 2.a.ii (text only, caption / summary).
void apply_preset(RunConfig& cfg, const std::string& task);
std::vector<std::string> preset_names();

/// Defaults, then the preset named by a `task` entry, then every entry.
RunConfig resolve_config(const std::vector<std::pair<std::string, std::string>>& entries);
RunConfig config_from_text(const std::string& text);

}  // namespace fh
