// SPDX-License-Identifier: Apache-2.0
//
// Converts parsed dialogues and feature files into model-ready examples.

#pragma once

#include <vector>

#include "filmhred/dataset.hpp"
#include "filmhred/features.hpp"
#include "filmhred/model.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

/// Token ids of the description selected by `source`, <eos>-terminated.
/// "both" is the caption followed by the summary, each ending in <eos>.
/// Empty for kNone. A requested summary that is absent is a DataError.
std::vector<int> description_ids(const Dialogue& dialogue, DescriptionSource source, const Vocabulary& vocab);

/// Builds one example. Feature tracks are read from `features` only for the
/// modalities the config enables; video tracks are resampled to L rows on the
/// FiLM path; a missing audio track becomes a single zero frame (flagged).
DialogueExample make_example(const Dialogue& dialogue, const Vocabulary& vocab, const ModelConfig& cfg,
                             const FeatureStore* features);

std::vector<DialogueExample> make_examples(const std::vector<Dialogue>& dialogues, const Vocabulary& vocab,
                                           const ModelConfig& cfg, const FeatureStore* features);

}  // namespace fh
