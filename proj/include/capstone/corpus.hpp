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

#include <map>
#include <optional>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "capstone/common.hpp"

namespace capstone {

struct Document {
  std::string id;
  Tokens tokens;  // lowercased, whitespace-split, truncated
};

struct Query {
  std::string id;
  Tokens tokens;
};

/// The retrieval universe. Documents keep load order; ids are unique.
class Corpus {
 public:
  Corpus() = default;

  void add(Document doc) {
    if (doc.id.empty()) throw validation_error("document with empty id");
    if (doc.tokens.empty())
      throw validation_error("document " + doc.id + " has no tokens");
    auto [it, inserted] = index_.emplace(doc.id, docs_.size());
    if (!inserted) throw validation_error("duplicate document id " + doc.id);
    docs_.push_back(std::move(doc));
  }

  std::size_t size() const { return docs_.size(); }
  const std::vector<Document>& documents() const { return docs_; }
  const Document& at(std::size_t i) const { return docs_.at(i); }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }

  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw validation_error("unknown document id " + id);
    return it->second;
  }

  const Document& by_id(const std::string& id) const {
    return docs_[index_of(id)];
  }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// query-id -> set of relevant doc-ids (binary judgments, relevance > 0).
struct QRels {
  std::map<std::string, std::set<std::string>> judged;

  bool has(const std::string& qid) const { return judged.count(qid) > 0; }
  const std::set<std::string>& relevant(const std::string& qid) const {
    auto it = judged.find(qid);
    if (it == judged.end())
      throw validation_error("query " + qid + " missing from qrels");
    return it->second;
  }
};

/// doc-id -> pseudo-queries in generation order.
struct GeneratedQueryStore {
  std::map<std::string, std::vector<Tokens>> by_doc;

  bool has(const std::string& doc_id) const { return by_doc.count(doc_id) > 0; }
  const std::vector<Tokens>& of(const std::string& doc_id) const {
    auto it = by_doc.find(doc_id);
    if (it == by_doc.end())
      throw config_error("no generated queries for document " + doc_id);
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// File formats: corpus = JSON lines {"id","text"}; queries = TSV id\ttext;
// qrels = TREC 4-column; generated queries = TSV docid\tquery.
// ---------------------------------------------------------------------------

inline Corpus load_corpus(const std::filesystem::path& path,
                          std::size_t max_doc_len = kMaxDocLen) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(path.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
    }
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("text") ||
        !rec["id"].is_string() || !rec["text"].is_string()) {
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": expected object with string fields id, text");
    }
    Document doc{rec["id"].get<std::string>(),
                 tokenize(rec["text"].get<std::string>(), max_doc_len)};
    if (doc.tokens.empty())
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": document " + doc.id + " has empty text");
    corpus.add(std::move(doc));
  }
  if (corpus.size() == 0) throw validation_error(path.string() + ": empty corpus");
  return corpus;
}

inline void save_corpus(const Corpus& corpus,
                        const std::filesystem::path& path) {
  std::string out;
  for (const auto& d : corpus.documents()) {
    nlohmann::json rec{{"id", d.id}, {"text", join_tokens(d.tokens)}};
    out += rec.dump();
    out += '\n';
  }
  write_file(path, out);
}

inline std::vector<Query> load_queries(const std::filesystem::path& path,
                                       std::size_t max_query_len =
                                           kMaxQueryLen) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::vector<Query> queries;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": missing tab separator");
    Query q{line.substr(0, tab), tokenize(line.substr(tab + 1), max_query_len)};
    if (q.id.empty())
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": empty query id");
    if (q.tokens.empty())
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": query " + q.id + " has empty text");
    if (!seen.insert(q.id).second)
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": duplicate query id " + q.id);
    queries.push_back(std::move(q));
  }
  if (queries.empty()) throw validation_error(path.string() + ": no queries");
  return queries;
}

inline void save_queries(const std::vector<Query>& queries,
                         const std::filesystem::path& path) {
  std::string out;
  for (const auto& q : queries) {
    out += q.id;
    out += '\t';
    out += join_tokens(q.tokens);
    out += '\n';
  }
  write_file(path, out);
}

inline QRels load_qrels(const std::filesystem::path& path,
                        const Corpus* corpus = nullptr) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  QRels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, zero, docid;
    long rel = 0;
    if (!(ss >> qid >> zero >> docid >> rel))
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": expected 4 columns qid 0 docid rel");
    if (rel <= 0) continue;
    if (corpus && !corpus->contains(docid))
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": unknown document id " + docid);
    qrels.judged[qid].insert(docid);
  }
  if (qrels.judged.empty())
    throw validation_error(path.string() + ": no judged queries");
  return qrels;
}

inline void save_qrels(const QRels& qrels, const std::filesystem::path& path) {
  std::string out;
  for (const auto& [qid, docs] : qrels.judged)
    for (const auto& d : docs) out += qid + " 0 " + d + " 1\n";
  write_file(path, out);
}

inline GeneratedQueryStore load_generated_queries(
    const std::filesystem::path& path, const Corpus& corpus,
    std::size_t max_query_len = kMaxQueryLen) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  GeneratedQueryStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": missing tab separator");
    std::string docid = line.substr(0, tab);
    if (!corpus.contains(docid))
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": unknown document id " + docid);
    Tokens toks = tokenize(line.substr(tab + 1), max_query_len);
    if (toks.empty())
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": empty generated query for " + docid);
    store.by_doc[docid].push_back(std::move(toks));
  }
  if (store.by_doc.empty())
    throw validation_error(path.string() + ": no generated queries");
  return store;
}

inline void save_generated_queries(const GeneratedQueryStore& store,
                                   const std::filesystem::path& path) {
  std::string out;
  for (const auto& [docid, list] : store.by_doc)
    for (const auto& toks : list)
      out += docid + "\t" + join_tokens(toks) + "\n";
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic dataset generator. Stands in for a seq2seq query generator:
// every document gets a gold query (its most frequent tokens) and a list of
// pseudo-queries whose agreement with the gold query is controlled by a
// per-slot fidelity in [0,1].
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t vocab_size = 2000;
  std::size_t n_docs = 200;
  std::size_t doc_len = 24;
  std::size_t n_queries = 50;
  std::size_t queries_per_doc = 5;
  // One fidelity per pseudo-query slot, cycled when shorter than
  // queries_per_doc. A single entry gives every slot the same fidelity.
  std::vector<double> fidelities = {0.5};
  // Document structure: how many salient token types a document repeats and
  // the fraction of positions drawn from them.
  std::size_t salient_per_doc = 5;
  double salient_mass = 0.5;
  std::size_t gold_query_len = 5;
};

struct SynthDataset {
  Corpus corpus;
  std::vector<Query> queries;
  QRels qrels;
  GeneratedQueryStore store;
};

namespace detail {

inline std::string pad_number(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  while (s.size() < width) s.insert(s.begin(), '0');
  return s;
}

inline std::size_t digits_for(std::size_t n) {
  std::size_t d = 1, v = n > 0 ? n - 1 : 0;
  while (v >= 10) {
    v /= 10;
    ++d;
  }
  return d;
}

}  // namespace detail

/// Deterministic gold query for a document: the top-frequency tokens,
/// ties broken by token string ascending.
inline Tokens gold_query_tokens(const Document& doc, std::size_t len) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : doc.tokens) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> order(counts.begin(),
                                                         counts.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Tokens out;
  for (std::size_t i = 0; i < order.size() && i < len; ++i)
    out.push_back(order[i].first);
  return out;
}

/// Builds (Corpus, queries, QRels, GeneratedQueryStore) from a seed.
/// Pseudo-query position i copies gold[i] with probability p; otherwise it
/// draws from the document with probability p, else uniformly from the
/// vocabulary. At p=0 pseudo-queries carry no information about their
/// document; at p=1 they equal the gold query.
inline SynthDataset synthesize_dataset(const SynthConfig& cfg,
                                       std::uint64_t seed) {
  if (cfg.vocab_size < 50) throw config_error("vocab_size must be >= 50");
  if (cfg.queries_per_doc < 1)
    throw config_error("queries_per_doc must be >= 1");
  if (cfg.n_docs == 0 || cfg.doc_len == 0)
    throw config_error("n_docs and doc_len must be positive");
  if (cfg.n_queries > cfg.n_docs)
    throw config_error("n_queries cannot exceed n_docs");
  if (cfg.fidelities.empty()) throw config_error("fidelities must be non-empty");
  for (double p : cfg.fidelities)
    if (!(p >= 0.0 && p <= 1.0))
      throw config_error("fidelity must lie in [0,1]");
  if (cfg.salient_per_doc == 0 || cfg.gold_query_len == 0)
    throw config_error("salient_per_doc and gold_query_len must be positive");

  Rng rng(seed);
  const std::size_t vw = detail::digits_for(cfg.vocab_size);
  auto vocab_token = [&](std::size_t v) {
    return "w" + detail::pad_number(v, vw);
  };

  SynthDataset ds;
  const std::size_t dw = detail::digits_for(cfg.n_docs);
  std::vector<Tokens> golds(cfg.n_docs);
  for (std::size_t i = 0; i < cfg.n_docs; ++i) {
    std::vector<std::size_t> salient =
        sample_distinct(rng, cfg.vocab_size,
                        std::min(cfg.salient_per_doc, cfg.vocab_size));
    Tokens toks;
    toks.reserve(cfg.doc_len);
    for (std::size_t t = 0; t < cfg.doc_len; ++t) {
      if (uniform_real(rng) < cfg.salient_mass)
        toks.push_back(vocab_token(salient[uniform_index(rng, salient.size())]));
      else
        toks.push_back(vocab_token(uniform_index(rng, cfg.vocab_size)));
    }
    if (toks.size() > kMaxDocLen) toks.resize(kMaxDocLen);
    Document doc{"d" + detail::pad_number(i, dw), std::move(toks)};
    golds[i] = gold_query_tokens(doc, cfg.gold_query_len);
    ds.corpus.add(std::move(doc));
  }

  // Pseudo-queries for every document, emitted slot by slot.
  for (std::size_t i = 0; i < cfg.n_docs; ++i) {
    const Document& doc = ds.corpus.at(i);
    const Tokens& gold = golds[i];
    auto& list = ds.store.by_doc[doc.id];
    for (std::size_t s = 0; s < cfg.queries_per_doc; ++s) {
      const double p = cfg.fidelities[s % cfg.fidelities.size()];
      Tokens pq;
      pq.reserve(gold.size());
      for (std::size_t t = 0; t < gold.size(); ++t) {
        if (uniform_real(rng) < p) {
          pq.push_back(gold[t]);
        } else if (uniform_real(rng) < p) {
          pq.push_back(doc.tokens[uniform_index(rng, doc.tokens.size())]);
        } else {
          pq.push_back(vocab_token(uniform_index(rng, cfg.vocab_size)));
        }
      }
      list.push_back(std::move(pq));
    }
  }

  // Gold queries for a random subset of documents become the query set.
  const std::size_t qw = detail::digits_for(cfg.n_queries);
  std::vector<std::size_t> picked =
      sample_distinct(rng, cfg.n_docs, cfg.n_queries);
  for (std::size_t j = 0; j < picked.size(); ++j) {
    const Document& doc = ds.corpus.at(picked[j]);
    Query q{"q" + detail::pad_number(j, qw), golds[picked[j]]};
    ds.qrels.judged[q.id].insert(doc.id);
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

}  // namespace capstone
