// Copyright 2026-present the capstone project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <queue>
#include <unordered_map>

#include "capstone/common.hpp"
#include "capstone/corpus.hpp"

namespace capstone {

/// Longest common subsequence length, O(|a|*|b|) dynamic programming with a
/// rolling row.
inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Sentence-level ROUGE-L F1: P = LCS/|candidate|, R = LCS/|reference|,
/// F = 2PR/(P+R), and 0 when the LCS is empty.
inline double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty())
    throw validation_error("rouge_l: empty token sequence");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

/// Corpus-level statistics needed by BM25.
struct CorpusStats {
  std::size_t doc_count = 0;
  double avg_doc_len = 0.0;
  std::unordered_map<std::string, std::size_t> doc_freq;
  std::unordered_map<std::string, std::size_t> doc_len;

  static CorpusStats from_corpus(const Corpus& corpus) {
    CorpusStats s;
    s.doc_count = corpus.size();
    std::size_t total = 0;
    for (const auto& d : corpus.documents()) {
      total += d.tokens.size();
      s.doc_len[d.id] = d.tokens.size();
      std::set<std::string> types(d.tokens.begin(), d.tokens.end());
      for (const auto& t : types) ++s.doc_freq[t];
    }
    s.avg_doc_len =
        s.doc_count ? static_cast<double>(total) / s.doc_count : 0.0;
    return s;
  }
};

using TermCounts = std::unordered_map<std::string, std::size_t>;

inline TermCounts term_counts(const Document& doc) {
  TermCounts tf;
  for (const auto& t : doc.tokens) ++tf[t];
  return tf;
}

/// Robertson BM25 with idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)).
inline double bm25_score(const Tokens& query, const std::string& doc_id,
                         const CorpusStats& stats, const TermCounts& tf,
                         double k1 = 0.9, double b = 0.4) {
  auto len_it = stats.doc_len.find(doc_id);
  if (len_it == stats.doc_len.end())
    throw validation_error("bm25_score: unknown document id " + doc_id);
  const double len = static_cast<double>(len_it->second);
  const double norm = k1 * (1.0 - b + b * len / stats.avg_doc_len);
  double score = 0.0;
  for (const auto& term : query) {
    auto tf_it = tf.find(term);
    if (tf_it == tf.end()) continue;
    auto df_it = stats.doc_freq.find(term);
    const double df =
        df_it == stats.doc_freq.end() ? 0.0 : static_cast<double>(df_it->second);
    const double idf =
        std::log(1.0 + (static_cast<double>(stats.doc_count) - df + 0.5) /
                           (df + 0.5));
    const double f = static_cast<double>(tf_it->second);
    score += idf * f * (k1 + 1.0) / (f + norm);
  }
  return score;
}

struct ScoredDoc {
  std::string doc_id;
  double score;
};

/// Precomputed per-document term counts plus corpus statistics; the sparse
/// first-stage ranker.
class Bm25Scorer {
 public:
  explicit Bm25Scorer(const Corpus& corpus, double k1 = 0.9, double b = 0.4)
      : corpus_(&corpus),
        stats_(CorpusStats::from_corpus(corpus)),
        k1_(k1),
        b_(b) {
    tfs_.reserve(corpus.size());
    for (const auto& d : corpus.documents()) tfs_.push_back(term_counts(d));
  }

  const CorpusStats& stats() const { return stats_; }

  double score(const Tokens& query, std::size_t doc_index) const {
    return bm25_score(query, corpus_->at(doc_index).id, stats_,
                      tfs_[doc_index], k1_, b_);
  }

  /// k highest-scoring documents, score descending, ties by doc-id ascending.
  /// Returns fewer than k when the corpus is smaller.
  std::vector<ScoredDoc> top_k(const Tokens& query, std::size_t k) const {
    if (k == 0) throw config_error("bm25 top_k: k must be >= 1");
    auto better = [](const ScoredDoc& a, const ScoredDoc& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    };
    // min-heap on `better`: top() is the weakest kept entry
    std::vector<ScoredDoc> heap;
    auto heap_cmp = [&](const ScoredDoc& a, const ScoredDoc& b) {
      return better(a, b);
    };
    for (std::size_t i = 0; i < corpus_->size(); ++i) {
      ScoredDoc cand{corpus_->at(i).id, score(query, i)};
      if (heap.size() < k) {
        heap.push_back(std::move(cand));
        std::push_heap(heap.begin(), heap.end(), heap_cmp);
      } else if (better(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), heap_cmp);
        heap.back() = std::move(cand);
        std::push_heap(heap.begin(), heap.end(), heap_cmp);
      }
    }
    std::sort_heap(heap.begin(), heap.end(), heap_cmp);
    return heap;
  }

 private:
  const Corpus* corpus_;
  CorpusStats stats_;
  std::vector<TermCounts> tfs_;
  double k1_, b_;
};

}  // namespace capstone
