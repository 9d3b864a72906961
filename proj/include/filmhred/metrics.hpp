// SPDX-License-Identifier: Apache-2.0
//
// Corpus-level BLEU-1..4, ROUGE-L and CIDEr-D over tokenized segments.

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace fh {

using Tokens = std::vector<std::string>;

struct EvalPair {
  std::string id;
  Tokens candidate;
  std::vector<Tokens> references;
};

/// BLEU-1..max_n: clipped n-gram precision (clip = max count in any single
/// reference), geometric mean, brevity penalty against the closest reference
/// length. No smoothing: a zero precision makes that BLEU-n zero.
std::vector<double> bleu(const std::vector<EvalPair>& corpus, std::size_t max_n = 4);

/// LCS F-measure with recall weight beta, max over references, mean over segments.
double rouge_l(const std::vector<EvalPair>& corpus, double beta = 1.2);

/// CIDEr-D: tf-idf n-gram vectors (idf over the reference corpus), candidate
/// values clipped at the reference values, Gaussian length penalty, averaged
/// over n = 1..4 and over references, scaled by 10. Needs >= 2 segments.
double cider_d(const std::vector<EvalPair>& corpus, double sigma = 6.0);

struct MetricReport {
  std::vector<std::pair<std::string, double>> rows;  // fixed order

  double at(const std::string& name) const;
  /// One "name<TAB>value" line per metric, six decimals.
  std::string format() const;
};

MetricReport score_corpus(const std::vector<EvalPair>& corpus);

/// `segment_id<TAB>text` lines; several lines may share an id.
std::multimap<std::string, std::string> read_segments(std::istream& in, const std::string& origin);
std::multimap<std::string, std::string> read_segments(const std::filesystem::path& path);
void write_segment(std::ostream& out, const std::string& id, const std::string& text);

/// Aligns one candidate per id with its references; mismatched ids are a
/// DataError listing them.
std::vector<EvalPair> align_segments(const std::multimap<std::string, std::string>& candidates,
                                     const std::multimap<std::string, std::string>& references);

MetricReport score_run(const std::filesystem::path& candidates, const std::filesystem::path& references);

/// score / baseline − 1.
double relative_improvement(double score, double baseline);

}  // namespace fh
