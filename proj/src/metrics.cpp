// SPDX-License-Identifier: Apache-2.0

#include "filmhred/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "filmhred/errors.hpp"
#include "filmhred/vocab.hpp"

namespace fh {

namespace {

using NgramCounts = std::map<Tokens, double>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) out[Tokens(t.begin() + i, t.begin() + i + n)] += 1.0;
  return out;
}

void check_corpus(const std::vector<EvalPair>& corpus, const char* what) {
  if (corpus.empty()) throw DataError(std::string(what) + ": empty corpus");
  for (const EvalPair& p : corpus) {
    if (p.references.empty()) throw DataError(std::string(what) + ": segment '" + p.id + "' has no reference");
  }
}

std::size_t lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<double> bleu(const std::vector<EvalPair>& corpus, std::size_t max_n) {
  check_corpus(corpus, "bleu");
  if (max_n < 1) throw ConfigError("bleu: max_n must be >= 1");
  std::vector<double> matched(max_n, 0.0), total(max_n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (const EvalPair& p : corpus) {
    const double c = static_cast<double>(p.candidate.size());
    cand_len += c;
    // closest reference length, shorter on ties
    double best = -1.0;
    for (const Tokens& r : p.references) {
      const double rl = static_cast<double>(r.size());
      if (best < 0 || std::abs(rl - c) < std::abs(best - c) || (std::abs(rl - c) == std::abs(best - c) && rl < best)) {
        best = rl;
      }
    }
    ref_len += best;
    for (std::size_t n = 1; n <= max_n; ++n) {
      const NgramCounts cand = ngrams(p.candidate, n);
      NgramCounts clip;
      for (const Tokens& r : p.references) {
        for (const auto& [g, k] : ngrams(r, n)) clip[g] = std::max(clip[g], k);
      }
      for (const auto& [g, k] : cand) {
        total[n - 1] += k;
        const auto it = clip.find(g);
        if (it != clip.end()) matched[n - 1] += std::min(k, it->second);
      }
    }
  }
  std::vector<double> out(max_n, 0.0);
  if (cand_len == 0.0) return out;
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (matched[n - 1] == 0.0) break;  // every higher order is zero as well
    log_sum += std::log(matched[n - 1] / total[n - 1]);
    out[n - 1] = bp * std::exp(log_sum / static_cast<double>(n));
  }
  return out;
}

double rouge_l(const std::vector<EvalPair>& corpus, double beta) {
  check_corpus(corpus, "rouge_l");
  double sum = 0.0;
  for (const EvalPair& p : corpus) {
    double best = 0.0;
    for (const Tokens& r : p.references) {
      const double l = static_cast<double>(lcs(p.candidate, r));
      if (l == 0.0) continue;
      const double prec = l / static_cast<double>(p.candidate.size());
      const double rec = l / static_cast<double>(r.size());
      const double f = (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec);
      best = std::max(best, f);
    }
    sum += best;
  }
  return sum / static_cast<double>(corpus.size());
}

double cider_d(const std::vector<EvalPair>& corpus, double sigma) {
  check_corpus(corpus, "cider_d");
  if (corpus.size() < 2) {
    throw DataError("cider_d: document frequencies need a corpus of at least 2 segments");
  }
  constexpr std::size_t kMaxN = 4;
  const double log_docs = std::log(static_cast<double>(corpus.size()));

  std::array<std::map<Tokens, double>, kMaxN> df;
  for (const EvalPair& p : corpus) {
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      std::set<Tokens> seen;
      for (const Tokens& r : p.references) {
        for (const auto& [g, k] : ngrams(r, n)) seen.insert(g);
      }
      for (const Tokens& g : seen) df[n - 1][g] += 1.0;
    }
  }

  auto tfidf = [&](const Tokens& t, std::size_t n, double& norm) {
    NgramCounts v = ngrams(t, n);
    norm = 0.0;
    for (auto& [g, k] : v) {
      const auto it = df[n - 1].find(g);
      const double d = it == df[n - 1].end() ? 1.0 : std::max(1.0, it->second);
      k *= log_docs - std::log(d);
      norm += k * k;
    }
    norm = std::sqrt(norm);
    return v;
  };

  double total = 0.0;
  for (const EvalPair& p : corpus) {
    double seg = 0.0;
    for (const Tokens& r : p.references) {
      const double delta = static_cast<double>(p.candidate.size()) - static_cast<double>(r.size());
      const double penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
      double per_n = 0.0;
      for (std::size_t n = 1; n <= kMaxN; ++n) {
        double nh = 0.0, nr = 0.0;
        const NgramCounts vh = tfidf(p.candidate, n, nh);
        const NgramCounts vr = tfidf(r, n, nr);
        if (nh == 0.0 || nr == 0.0) continue;
        double dot = 0.0;
        for (const auto& [g, h] : vh) {
          const auto it = vr.find(g);
          if (it != vr.end()) dot += std::min(h, it->second) * it->second;
        }
        per_n += penalty * dot / (nh * nr);
      }
      seg += per_n / static_cast<double>(kMaxN);
    }
    total += 10.0 * seg / static_cast<double>(p.references.size());
  }
  return total / static_cast<double>(corpus.size());
}

double MetricReport::at(const std::string& name) const {
  for (const auto& [k, v] : rows) {
    if (k == name) return v;
  }
  throw Error("no metric named " + name);
}

std::string MetricReport::format() const {
  std::string out;
  char buf[64];
  for (const auto& [k, v] : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    out += k + "\t" + buf + "\n";
  }
  return out;
}

MetricReport score_corpus(const std::vector<EvalPair>& corpus) {
  MetricReport r;
  const std::vector<double> b = bleu(corpus, 4);
  for (std::size_t n = 0; n < 4; ++n) r.rows.emplace_back("BLEU-" + std::to_string(n + 1), b[n]);
  r.rows.emplace_back("ROUGE-L", rouge_l(corpus));
  r.rows.emplace_back("CIDEr-D", cider_d(corpus));
  return r;
}

std::multimap<std::string, std::string> read_segments(std::istream& in, const std::string& origin) {
  std::multimap<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw DataError(origin + ":" + std::to_string(lineno) + ": expected segment_id<TAB>text");
    }
    out.emplace(line.substr(0, tab), line.substr(tab + 1));
  }
  return out;
}

std::multimap<std::string, std::string> read_segments(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return read_segments(in, path.string());
}

void write_segment(std::ostream& out, const std::string& id, const std::string& text) {
  out << id << '\t' << text << '\n';
}

std::vector<EvalPair> align_segments(const std::multimap<std::string, std::string>& candidates,
                                     const std::multimap<std::string, std::string>& references) {
  std::vector<std::string> problems;
  for (auto it = candidates.begin(); it != candidates.end(); it = candidates.upper_bound(it->first)) {
    if (candidates.count(it->first) > 1) problems.push_back(it->first + " (duplicate candidate)");
    if (!references.count(it->first)) problems.push_back(it->first + " (no reference)");
  }
  for (auto it = references.begin(); it != references.end(); it = references.upper_bound(it->first)) {
    if (!candidates.count(it->first)) problems.push_back(it->first + " (no candidate)");
  }
  if (!problems.empty()) {
    std::string msg = "segment ids do not align:";
    for (std::size_t i = 0; i < problems.size() && i < 20; ++i) msg += " " + problems[i] + ";";
    if (problems.size() > 20) msg += " ... (" + std::to_string(problems.size()) + " total)";
    throw DataError(msg);
  }
  std::vector<EvalPair> out;
  for (const auto& [id, text] : candidates) {
    EvalPair p;
    p.id = id;
    p.candidate = tokenize(text);
    const auto [lo, hi] = references.equal_range(id);
    for (auto it = lo; it != hi; ++it) p.references.push_back(tokenize(it->second));
    out.push_back(std::move(p));
  }
  return out;
}

MetricReport score_run(const std::filesystem::path& candidates, const std::filesystem::path& references) {
  return score_corpus(align_segments(read_segments(candidates), read_segments(references)));
}

double relative_improvement(double score, double baseline) {
  if (baseline == 0.0) throw Error("relative_improvement: zero baseline");
  return score / baseline - 1.0;
}

}  // namespace fh
