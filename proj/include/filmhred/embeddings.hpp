// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>

#include "filmhred/tensor.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

inline constexpr std::size_t kGloveDim = 300;

struct EmbeddingTable {
  Tensor matrix;  // [vocab, dim]
  std::size_t hits = 0;
  double coverage = 0.0;  // hits / vocab size
  bool trainable = true;
};

/// Reads GloVe-style text (`token v1 ... vD` per line). Rows of vocabulary
/// tokens found in the file are copied verbatim; all other rows are drawn
/// uniformly from (-0.08, 0.08). Lines for tokens outside the vocabulary are
/// skipped. A line with a dimension other than `dim` is a DataError.
EmbeddingTable load_embeddings(std::istream& in, const Vocabulary& vocab, Rng& rng,
                               std::size_t dim = kGloveDim);
EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab, Rng& rng,
                               std::size_t dim = kGloveDim);

}  // namespace fh
