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

#include <cstdlib>
#include <mutex>
#include <thread>

#include "capstone/encoder.hpp"
#include "capstone/textmetrics.hpp"

namespace capstone {

inline std::size_t threads_from_env() {
  const char* env = std::getenv("CAPSTONE_THREADS");
  if (!env) return 1;
  long v = std::strtol(env, nullptr, 10);
  return v > 0 ? static_cast<std::size_t>(v) : 1;
}

/// Runs fn(i) for i in [0, n). Work is chunked over `threads` std::threads;
/// every index is owned by exactly one thread, so writes to per-index slots
/// stay deterministic.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  threads = std::min(threads, n);
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

enum class IndexMode : std::uint32_t {
  no_expansion = 0,
  corpus_expansion = 1,
  typical = 2,
  document_expansion = 3,
  asymmetric = 4,
};

enum class Pooling : std::uint32_t { average = 0, max = 1, median = 2 };

inline std::string to_string(IndexMode m) {
  switch (m) {
    case IndexMode::no_expansion: return "no_expansion";
    case IndexMode::corpus_expansion: return "corpus_expansion";
    case IndexMode::typical: return "typical";
    case IndexMode::document_expansion: return "document_expansion";
    case IndexMode::asymmetric: return "asymmetric";
  }
  return "no_expansion";
}

inline IndexMode index_mode_from_string(std::string_view s) {
  if (s == "no_expansion") return IndexMode::no_expansion;
  if (s == "corpus_expansion") return IndexMode::corpus_expansion;
  if (s == "typical") return IndexMode::typical;
  if (s == "document_expansion") return IndexMode::document_expansion;
  if (s == "asymmetric") return IndexMode::asymmetric;
  throw config_error("unknown index mode: " + std::string(s));
}

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::average: return "average";
    case Pooling::max: return "max";
    case Pooling::median: return "median";
  }
  return "average";
}

inline Pooling pooling_from_string(std::string_view s) {
  if (s == "average") return Pooling::average;
  if (s == "max") return Pooling::max;
  if (s == "median") return Pooling::median;
  throw config_error("unknown pooling: " + std::string(s));
}

/// S encoded views per document; view j pairs the document with its j-th
/// stored pseudo-query (cycling when the store holds fewer than S).
struct DocumentViewMatrix {
  std::vector<std::string> doc_ids;
  std::size_t s = 0;
  std::vector<std::vector<Vec>> views;  // [doc][view]
};

inline DocumentViewMatrix encode_corpus_views(
    const EncoderModel& model, const TokenVocab& vocab, const Corpus& corpus,
    const GeneratedQueryStore& store, std::size_t s,
    const EncodeLimits& lim = {}, std::size_t threads = 1) {
  if (s == 0) throw config_error("encode_corpus_views: S must be >= 1");
  DocumentViewMatrix vm;
  vm.s = s;
  vm.doc_ids.reserve(corpus.size());
  for (const auto& d : corpus.documents()) vm.doc_ids.push_back(d.id);
  vm.views.assign(corpus.size(), {});
  parallel_for(corpus.size(), threads, [&](std::size_t i) {
    const Document& d = corpus.at(i);
    const auto& queries = store.of(d.id);  // throws when absent
    std::vector<Vec> dv;
    dv.reserve(s);
    for (std::size_t j = 0; j < s; ++j) {
      const Tokens& q = queries[j % queries.size()];
      dv.push_back(encode_document(model, vocab, d.tokens, {&q, 1}, lim));
    }
    vm.views[i] = std::move(dv);
  });
  return vm;
}

/// Component-wise mean, max, or median over a document's views. Median of an
/// even count is the mean of the two middle values.
inline Vec pool_views(const std::vector<Vec>& views, Pooling pooling) {
  if (views.empty()) throw config_error("pool_views: no views");
  const std::size_t h = views[0].size();
  Vec out(h, 0.0);
  switch (pooling) {
    case Pooling::average: {
      for (const Vec& v : views)
        for (std::size_t c = 0; c < h; ++c) out[c] += v[c];
      for (double& x : out) x /= static_cast<double>(views.size());
      break;
    }
    case Pooling::max: {
      out = views[0];
      for (std::size_t i = 1; i < views.size(); ++i)
        for (std::size_t c = 0; c < h; ++c) out[c] = std::max(out[c], views[i][c]);
      break;
    }
    case Pooling::median: {
      std::vector<double> col(views.size());
      for (std::size_t c = 0; c < h; ++c) {
        for (std::size_t i = 0; i < views.size(); ++i) col[i] = views[i][c];
        std::sort(col.begin(), col.end());
        const std::size_t n = col.size();
        out[c] = (n % 2 == 1) ? col[n / 2]
                              : 0.5 * (col[n / 2 - 1] + col[n / 2]);
      }
      break;
    }
  }
  return out;
}

/// Flat inner-product index. Rows are single precision; `row_doc` maps each
/// row to its document (many-to-one under corpus expansion).
struct RetrievalIndex {
  IndexMode mode = IndexMode::no_expansion;
  Pooling pooling = Pooling::average;
  std::size_t n_docs = 0;
  std::size_t dim = 0;
  std::size_t s = 1;
  std::vector<std::string> doc_ids;   // unique, corpus order
  std::vector<std::uint32_t> row_doc; // row -> doc_ids index
  std::vector<float> vectors;         // rows x dim, row-major

  std::size_t rows() const { return dim == 0 ? 0 : vectors.size() / dim; }
  const float* row(std::size_t r) const { return vectors.data() + r * dim; }
};

namespace detail {

inline void push_row(RetrievalIndex& idx, std::size_t row, const Vec& v) {
  float* dst = idx.vectors.data() + row * idx.dim;
  for (std::size_t c = 0; c < idx.dim; ++c)
    dst[c] = static_cast<float>(v[c]);
}

}  // namespace detail

/// Builds the index for one expansion mode:
///   no_expansion       one vector per document, no queries appended
///   corpus_expansion   all N*S view vectors, each mapped to its document
///   typical            per-document pooled view vectors
///   document_expansion one vector per document with all S queries appended
///   asymmetric         same construction as document_expansion; the mode is
///                      kept distinct because it is evaluated over a model
///                      trained with single-query expansion
inline RetrievalIndex build_index(const EncoderModel& model,
                                  const TokenVocab& vocab, const Corpus& corpus,
                                  const GeneratedQueryStore* store,
                                  IndexMode mode, std::size_t s,
                                  Pooling pooling = Pooling::average,
                                  const EncodeLimits& lim = {},
                                  std::size_t threads = 1) {
  if (corpus.size() == 0) throw config_error("build_index: empty corpus");
  if (s == 0) throw config_error("build_index: S must be >= 1");
  if (mode != IndexMode::no_expansion && store == nullptr)
    throw config_error("build_index: mode " + to_string(mode) +
                       " requires generated queries");
  RetrievalIndex idx;
  idx.mode = mode;
  idx.pooling = pooling;
  idx.n_docs = corpus.size();
  idx.dim = model.dim;
  idx.s = s;
  for (const auto& d : corpus.documents()) idx.doc_ids.push_back(d.id);

  switch (mode) {
    case IndexMode::no_expansion: {
      idx.vectors.assign(idx.n_docs * idx.dim, 0.0f);
      idx.row_doc.resize(idx.n_docs);
      parallel_for(idx.n_docs, threads, [&](std::size_t i) {
        idx.row_doc[i] = static_cast<std::uint32_t>(i);
        detail::push_row(idx, i, encode_document(model, vocab,
                                                 corpus.at(i).tokens, {}, lim));
      });
      break;
    }
    case IndexMode::corpus_expansion:
    case IndexMode::typical: {
      DocumentViewMatrix vm =
          encode_corpus_views(model, vocab, corpus, *store, s, lim, threads);
      if (mode == IndexMode::corpus_expansion) {
        idx.vectors.assign(idx.n_docs * s * idx.dim, 0.0f);
        idx.row_doc.resize(idx.n_docs * s);
        for (std::size_t i = 0; i < idx.n_docs; ++i) {
          for (std::size_t j = 0; j < s; ++j) {
            const std::size_t row = i * s + j;
            idx.row_doc[row] = static_cast<std::uint32_t>(i);
            detail::push_row(idx, row, vm.views[i][j]);
          }
        }
      } else {
        idx.vectors.assign(idx.n_docs * idx.dim, 0.0f);
        idx.row_doc.resize(idx.n_docs);
        for (std::size_t i = 0; i < idx.n_docs; ++i) {
          idx.row_doc[i] = static_cast<std::uint32_t>(i);
          detail::push_row(idx, i, pool_views(vm.views[i], pooling));
        }
      }
      break;
    }
    case IndexMode::document_expansion:
    case IndexMode::asymmetric: {
      idx.vectors.assign(idx.n_docs * idx.dim, 0.0f);
      idx.row_doc.resize(idx.n_docs);
      parallel_for(idx.n_docs, threads, [&](std::size_t i) {
        const Document& d = corpus.at(i);
        const auto& queries = store->of(d.id);
        std::vector<Tokens> exps;
        exps.reserve(s);
        for (std::size_t j = 0; j < s; ++j)
          exps.push_back(queries[j % queries.size()]);
        idx.row_doc[i] = static_cast<std::uint32_t>(i);
        detail::push_row(idx, i,
                         encode_document(model, vocab, d.tokens, exps, lim));
      });
      break;
    }
  }
  return idx;
}

struct SearchResult {
  std::vector<ScoredDoc> hits;  // score non-increasing, doc-ids unique
};

/// Exact top-M by inner product. Under corpus expansion each document is
/// scored by its best view; ties break by doc-id ascending.
inline SearchResult search(const RetrievalIndex& index, const Vec& query_vec,
                           std::size_t m) {
  if (m == 0) throw config_error("search: M must be >= 1");
  if (index.rows() == 0) throw config_error("search: empty index");
  if (query_vec.size() != index.dim)
    throw validation_error("search: query dimension mismatch");

  // Best-scoring row per document.
  std::vector<double> best(index.n_docs,
                           -std::numeric_limits<double>::infinity());
  const std::size_t rows = index.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* v = index.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < index.dim; ++c)
      s += query_vec[c] * static_cast<double>(v[c]);
    const std::uint32_t d = index.row_doc[r];
    if (s > best[d]) best[d] = s;
  }

  auto better = [&](std::size_t a, std::size_t b) {
    if (best[a] != best[b]) return best[a] > best[b];
    return index.doc_ids[a] < index.doc_ids[b];
  };
  std::vector<std::size_t> heap;  // front = weakest kept doc
  const std::size_t keep = std::min(m, index.n_docs);
  for (std::size_t d = 0; d < index.n_docs; ++d) {
    if (heap.size() < keep) {
      heap.push_back(d);
      std::push_heap(heap.begin(), heap.end(), better);
    } else if (better(d, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), better);
      heap.back() = d;
      std::push_heap(heap.begin(), heap.end(), better);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), better);
  SearchResult res;
  res.hits.reserve(heap.size());
  for (std::size_t d : heap) res.hits.push_back({index.doc_ids[d], best[d]});
  return res;
}

// ---------------------------------------------------------------------------
// Index file: "CAPSTIDX" magic, u32 version, u32 mode, u32 pooling, u32 h,
// u32 S, u32 pad, u64 config hash, u64 N, u64 rows, then the row-major
// single-precision vectors, the doc-id table and the row->doc map.
// ---------------------------------------------------------------------------

inline constexpr char kIndexMagic[8] = {'C', 'A', 'P', 'S', 'T', 'I', 'D', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;

inline void save_index(const RetrievalIndex& idx,
                       const std::filesystem::path& path,
                       std::uint64_t config_hash = 0) {
  std::string out;
  out.append(kIndexMagic, sizeof(kIndexMagic));
  detail::put_raw(out, kIndexVersion);
  detail::put_raw(out, static_cast<std::uint32_t>(idx.mode));
  detail::put_raw(out, static_cast<std::uint32_t>(idx.pooling));
  detail::put_raw(out, static_cast<std::uint32_t>(idx.dim));
  detail::put_raw(out, static_cast<std::uint32_t>(idx.s));
  detail::put_raw(out, std::uint32_t{0});
  detail::put_raw(out, config_hash);
  detail::put_raw(out, static_cast<std::uint64_t>(idx.n_docs));
  detail::put_raw(out, static_cast<std::uint64_t>(idx.rows()));
  out.append(reinterpret_cast<const char*>(idx.vectors.data()),
             idx.vectors.size() * sizeof(float));
  detail::put_raw(out, static_cast<std::uint64_t>(idx.doc_ids.size()));
  for (const auto& id : idx.doc_ids) {
    detail::put_raw(out, static_cast<std::uint32_t>(id.size()));
    out.append(id);
  }
  out.append(reinterpret_cast<const char*>(idx.row_doc.data()),
             idx.row_doc.size() * sizeof(std::uint32_t));
  write_file(path, out);
}

inline RetrievalIndex load_index(const std::filesystem::path& path,
                                 std::uint64_t* config_hash = nullptr) {
  const std::string data = read_file(path);
  if (data.size() < sizeof(kIndexMagic) ||
      std::memcmp(data.data(), kIndexMagic, sizeof(kIndexMagic)) != 0)
    throw parse_error(path.string() + ": not a capstone index");
  std::size_t off = sizeof(kIndexMagic);
  const auto version = detail::get_raw<std::uint32_t>(data, off);
  if (version != kIndexVersion)
    throw parse_error(path.string() + ": unsupported index version " +
                      std::to_string(version));
  RetrievalIndex idx;
  idx.mode = static_cast<IndexMode>(detail::get_raw<std::uint32_t>(data, off));
  idx.pooling = static_cast<Pooling>(detail::get_raw<std::uint32_t>(data, off));
  idx.dim = detail::get_raw<std::uint32_t>(data, off);
  idx.s = detail::get_raw<std::uint32_t>(data, off);
  detail::get_raw<std::uint32_t>(data, off);  // pad
  const auto hash = detail::get_raw<std::uint64_t>(data, off);
  if (config_hash) *config_hash = hash;
  idx.n_docs = detail::get_raw<std::uint64_t>(data, off);
  const auto rows = detail::get_raw<std::uint64_t>(data, off);
  idx.vectors.resize(rows * idx.dim);
  const std::size_t vec_bytes = idx.vectors.size() * sizeof(float);
  if (off + vec_bytes > data.size())
    throw parse_error(path.string() + ": truncated index vectors");
  std::memcpy(idx.vectors.data(), data.data() + off, vec_bytes);
  off += vec_bytes;
  const auto n_ids = detail::get_raw<std::uint64_t>(data, off);
  idx.doc_ids.reserve(n_ids);
  for (std::uint64_t i = 0; i < n_ids; ++i) {
    const auto len = detail::get_raw<std::uint32_t>(data, off);
    if (off + len > data.size())
      throw parse_error(path.string() + ": truncated doc-id table");
    idx.doc_ids.emplace_back(data.data() + off, len);
    off += len;
  }
  idx.row_doc.resize(rows);
  const std::size_t map_bytes = idx.row_doc.size() * sizeof(std::uint32_t);
  if (off + map_bytes > data.size())
    throw parse_error(path.string() + ": truncated row map");
  std::memcpy(idx.row_doc.data(), data.data() + off, map_bytes);
  off += map_bytes;
  if (off != data.size())
    throw parse_error(path.string() + ": trailing bytes in index");
  return idx;
}

// ---------------------------------------------------------------------------
// TREC run files: "qid Q0 docid rank score tag".
// ---------------------------------------------------------------------------

using Run = std::vector<std::pair<std::string, SearchResult>>;

inline void save_run_file(const Run& run, const std::filesystem::path& path,
                          const std::string& tag) {
  std::string out;
  for (const auto& [qid, result] : run) {
    std::size_t rank = 1;
    for (const auto& hit : result.hits) {
      out += qid + " Q0 " + hit.doc_id + " " + std::to_string(rank) + " " +
             format_fixed(hit.score, 6) + " " + tag + "\n";
      ++rank;
    }
  }
  write_file(path, out);
}

inline std::map<std::string, std::vector<ScoredDoc>> load_run_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::map<std::string, std::vector<ScoredDoc>> run;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string qid, q0, docid, tag;
    std::size_t rank;
    double score;
    if (!(ss >> qid >> q0 >> docid >> rank >> score >> tag))
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": expected 6 run-file columns");
    auto& hits = run[qid];
    if (rank != hits.size() + 1)
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": ranks must be contiguous from 1 per query");
    hits.push_back({docid, score});
  }
  if (run.empty()) throw validation_error(path.string() + ": empty run file");
  return run;
}

}  // namespace capstone
