// SPDX-License-Identifier: Apache-2.0

#include "filmhred/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "filmhred/errors.hpp"
#include "filmhred/layers.hpp"

namespace fh {

EmbeddingTable load_embeddings(std::istream& in, const Vocabulary& vocab, Rng& rng, std::size_t dim) {
  EmbeddingTable table;
  table.matrix = init_uniform({vocab.size(), dim}, rng);
  std::vector<bool> seen(vocab.size(), false);

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    std::string field;
    while (ls >> field) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw DataError("embeddings line " + std::to_string(lineno) + ": bad number '" + field + "'");
      }
      values.push_back(v);
    }
    if (values.size() != dim) {
      throw DataError("embeddings line " + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                      " values, found " + std::to_string(values.size()));
    }
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id(token));
    if (seen[id]) continue;
    seen[id] = true;
    ++table.hits;
    std::copy(values.begin(), values.end(), table.matrix.data().begin() + id * dim);
  }
  table.coverage = static_cast<double>(table.hits) / static_cast<double>(vocab.size());
  return table;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocabulary& vocab, Rng& rng,
                               std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embeddings file " + path.string());
  return load_embeddings(in, vocab, rng, dim);
}

}  // namespace fh
