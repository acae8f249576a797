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
#include <cstring>
#include <span>

#include "capstone/common.hpp"
#include "capstone/corpus.hpp"

namespace capstone {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;

  static Mat zeros(std::size_t r, std::size_t c) {
    return Mat{r, c, std::vector<double>(r * c, 0.0)};
  }
  static Mat identity(std::size_t n) {
    Mat m = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) m.a[i * n + i] = 1.0;
    return m;
  }
  double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
  double* row(std::size_t r) { return a.data() + r * cols; }
  const double* row(std::size_t r) const { return a.data() + r * cols; }
};

// Reserved token ids on both towers.
inline constexpr std::uint32_t kOovId = 0;
inline constexpr std::uint32_t kSepId = 1;
inline constexpr std::uint32_t kReservedIds = 2;

/// token -> id mapping; id 0 is OOV, id 1 the document/expansion separator,
/// ids 2.. the sorted token types.
class TokenVocab {
 public:
  TokenVocab() = default;

  static TokenVocab build(const Corpus& corpus,
                          const GeneratedQueryStore* store = nullptr) {
    std::set<std::string> types;
    for (const auto& d : corpus.documents())
      types.insert(d.tokens.begin(), d.tokens.end());
    if (store)
      for (const auto& [_, list] : store->by_doc)
        for (const auto& q : list) types.insert(q.begin(), q.end());
    return from_types(types);
  }

  static TokenVocab from_tokens(const Tokens& tokens) {
    return from_types(std::set<std::string>(tokens.begin(), tokens.end()));
  }

  std::uint32_t id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kOovId : it->second;
  }

  /// Total id space including the two reserved ids.
  std::size_t size() const { return tokens_.size() + kReservedIds; }

  void save(const std::filesystem::path& path,
            const std::string& header_comment = {}) const {
    std::string out;
    if (!header_comment.empty()) out += "# " + header_comment + "\n";
    for (const auto& t : tokens_) out += t + "\n";
    write_file(path, out);
  }

  static TokenVocab load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path.string());
    TokenVocab v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      v.ids_[line] = static_cast<std::uint32_t>(v.tokens_.size() + kReservedIds);
      v.tokens_.push_back(line);
    }
    return v;
  }

 private:
  static TokenVocab from_types(const std::set<std::string>& types) {
    TokenVocab v;
    v.tokens_.assign(types.begin(), types.end());
    for (std::size_t i = 0; i < v.tokens_.size(); ++i)
      v.ids_[v.tokens_[i]] = static_cast<std::uint32_t>(i + kReservedIds);
    return v;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

/// Two embedding towers with mean pooling and a linear projection each.
/// Similarity is the raw inner product of the tower outputs.
struct EncoderModel {
  std::size_t vocab_size = 0;  // V, includes reserved ids
  std::size_t dim = 0;         // h
  Mat query_embeddings;        // V x h
  Mat doc_embeddings;          // V x h
  Mat query_proj;              // h x h
  Mat doc_proj;                // h x h
};

struct Gradients {
  Mat query_embeddings, doc_embeddings, query_proj, doc_proj;

  static Gradients zeros_like(const EncoderModel& m) {
    return {Mat::zeros(m.vocab_size, m.dim), Mat::zeros(m.vocab_size, m.dim),
            Mat::zeros(m.dim, m.dim), Mat::zeros(m.dim, m.dim)};
  }
};

template <typename Fn>
void for_each_tensor(EncoderModel& m, Gradients& g, Fn&& fn) {
  fn("query_embeddings", m.query_embeddings, g.query_embeddings);
  fn("doc_embeddings", m.doc_embeddings, g.doc_embeddings);
  fn("query_proj", m.query_proj, g.query_proj);
  fn("doc_proj", m.doc_proj, g.doc_proj);
}

/// Embeddings ~ U(-0.1, 0.1), projections start as identity so the initial
/// encoder output is exactly the mean embedding.
inline EncoderModel init_model(std::size_t vocab_size, std::size_t dim,
                               std::uint64_t seed) {
  if (vocab_size == 0 || dim < 2)
    throw config_error("init_model: need vocab_size >= 1 and h >= 2");
  EncoderModel m;
  m.vocab_size = vocab_size;
  m.dim = dim;
  m.query_embeddings = Mat::zeros(vocab_size, dim);
  m.doc_embeddings = Mat::zeros(vocab_size, dim);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (double& x : m.query_embeddings.a) x = u(rng);
  for (double& x : m.doc_embeddings.a) x = u(rng);
  m.query_proj = Mat::identity(dim);
  m.doc_proj = Mat::identity(dim);
  return m;
}

struct EncodeLimits {
  std::size_t max_doc_len = kMaxDocLen;
  std::size_t max_query_len = kMaxQueryLen;
};

inline std::vector<std::uint32_t> query_token_ids(const TokenVocab& vocab,
                                                  const Tokens& tokens,
                                                  const EncodeLimits& lim = {}) {
  std::vector<std::uint32_t> ids;
  const std::size_t n = std::min(tokens.size(), lim.max_query_len);
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(vocab.id_of(tokens[i]));
  return ids;
}

/// Document ids: doc tokens truncated to max_doc_len, then every expansion
/// appended as SEP + its first max_query_len tokens.
inline std::vector<std::uint32_t> document_token_ids(
    const TokenVocab& vocab, const Tokens& doc_tokens,
    std::span<const Tokens> expansions, const EncodeLimits& lim = {}) {
  std::vector<std::uint32_t> ids;
  const std::size_t nd = std::min(doc_tokens.size(), lim.max_doc_len);
  for (std::size_t i = 0; i < nd; ++i) ids.push_back(vocab.id_of(doc_tokens[i]));
  for (const Tokens& exp : expansions) {
    ids.push_back(kSepId);
    const std::size_t ne = std::min(exp.size(), lim.max_query_len);
    for (std::size_t i = 0; i < ne; ++i) ids.push_back(vocab.id_of(exp[i]));
  }
  return ids;
}

inline Vec mean_embedding(const Mat& emb, std::span<const std::uint32_t> ids) {
  Vec u(emb.cols, 0.0);
  for (std::uint32_t id : ids) {
    const double* r = emb.row(id);
    for (std::size_t c = 0; c < emb.cols; ++c) u[c] += r[c];
  }
  const double inv = 1.0 / static_cast<double>(ids.size());
  for (double& x : u) x *= inv;
  return u;
}

inline Vec project(const Mat& p, const Vec& u) {
  Vec out(p.rows, 0.0);
  for (std::size_t r = 0; r < p.rows; ++r) {
    const double* row = p.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < p.cols; ++c) s += row[c] * u[c];
    out[r] = s;
  }
  return out;
}

inline Vec encode_query(const EncoderModel& m, const TokenVocab& vocab,
                        const Query& q, const EncodeLimits& lim = {}) {
  if (q.tokens.empty()) throw validation_error("encode_query: empty query");
  auto ids = query_token_ids(vocab, q.tokens, lim);
  return project(m.query_proj, mean_embedding(m.query_embeddings, ids));
}

inline Vec encode_document(const EncoderModel& m, const TokenVocab& vocab,
                           const Tokens& doc_tokens,
                           std::span<const Tokens> expansions = {},
                           const EncodeLimits& lim = {}) {
  if (doc_tokens.empty())
    throw validation_error("encode_document: empty document");
  auto ids = document_token_ids(vocab, doc_tokens, expansions, lim);
  return project(m.doc_proj, mean_embedding(m.doc_embeddings, ids));
}

inline double similarity(const Vec& qv, const Vec& dv) {
  if (qv.size() != dv.size())
    throw validation_error("similarity: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < qv.size(); ++i) s += qv[i] * dv[i];
  return s;
}

// ---------------------------------------------------------------------------
// Training batches and the contrastive objective.
// ---------------------------------------------------------------------------

/// A document instance inside a batch: base tokens plus at most one
/// training-time expansion. Selection metadata is carried for logging.
struct ExpandedDoc {
  std::string doc_id;
  Tokens tokens;
  std::vector<Tokens> expansions;        // empty or a single query
  std::size_t pool_index = kNoIndex;     // ranked-pool position, if any
  double expansion_score = 0.0;          // ROUGE-L of the expansion to gold
  std::size_t group = kNoIndex;          // curriculum group, if any
};

struct BatchRow {
  Query query;
  ExpandedDoc positive;
  std::vector<ExpandedDoc> hard_negatives;
};

struct TrainingBatch {
  std::vector<BatchRow> rows;
};

namespace detail {

struct BatchForward {
  // Flattened document instances: row r's positive at pos_index[r],
  // followed by its hard negatives.
  std::vector<std::vector<std::uint32_t>> query_ids;  // per row
  std::vector<Vec> query_means, query_vecs;
  std::vector<const std::string*> doc_of;             // doc-id per instance
  std::vector<std::vector<std::uint32_t>> doc_ids;    // token ids per instance
  std::vector<Vec> doc_means, doc_vecs;
  std::vector<std::size_t> pos_index;                 // per row
};

inline BatchForward forward_batch(const EncoderModel& m, const TokenVocab& vocab,
                                  const TrainingBatch& batch,
                                  const EncodeLimits& lim) {
  if (batch.rows.empty()) throw validation_error("empty training batch");
  BatchForward f;
  for (const BatchRow& row : batch.rows) {
    if (row.query.tokens.empty())
      throw validation_error("batch row with empty query");
    f.query_ids.push_back(query_token_ids(vocab, row.query.tokens, lim));
    f.query_means.push_back(mean_embedding(m.query_embeddings, f.query_ids.back()));
    f.query_vecs.push_back(project(m.query_proj, f.query_means.back()));
    auto add_doc = [&](const ExpandedDoc& d) {
      if (d.tokens.empty()) throw validation_error("batch document is empty");
      f.doc_of.push_back(&d.doc_id);
      f.doc_ids.push_back(document_token_ids(vocab, d.tokens, d.expansions, lim));
      f.doc_means.push_back(mean_embedding(m.doc_embeddings, f.doc_ids.back()));
      f.doc_vecs.push_back(project(m.doc_proj, f.doc_means.back()));
    };
    f.pos_index.push_back(f.doc_of.size());
    add_doc(row.positive);
    for (const ExpandedDoc& d : row.hard_negatives) add_doc(d);
  }
  return f;
}

}  // namespace detail

/// Mean over rows of -log softmax(positive | positive + negatives) where the
/// negatives are the row's hard negatives plus every other row's documents.
/// Instances sharing the positive's doc-id are excluded from the negatives.
/// Numerically stabilized by max-subtraction.
inline double contrastive_loss(const EncoderModel& m, const TokenVocab& vocab,
                               const TrainingBatch& batch,
                               const EncodeLimits& lim = {}) {
  auto f = detail::forward_batch(m, vocab, batch, lim);
  const std::size_t n_rows = batch.rows.size();
  double total = 0.0;
  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t pos = f.pos_index[r];
    const std::string& pos_id = *f.doc_of[pos];
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> scores;
    std::vector<std::size_t> cand;
    for (std::size_t t = 0; t < f.doc_vecs.size(); ++t) {
      if (t != pos && *f.doc_of[t] == pos_id) continue;
      double s = similarity(f.query_vecs[r], f.doc_vecs[t]);
      scores.push_back(s);
      cand.push_back(t);
      mx = std::max(mx, s);
    }
    double lse = 0.0;
    double pos_score = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      lse += std::exp(scores[i] - mx);
      if (cand[i] == pos) pos_score = scores[i];
    }
    total += -(pos_score - mx - std::log(lse));
  }
  return total / static_cast<double>(n_rows);
}

/// Loss plus exact gradients of every parameter tensor (reverse-mode through
/// projection, mean pooling, and embedding lookup).
inline std::pair<double, Gradients> loss_and_gradients(
    const EncoderModel& m, const TokenVocab& vocab, const TrainingBatch& batch,
    const EncodeLimits& lim = {}) {
  auto f = detail::forward_batch(m, vocab, batch, lim);
  const std::size_t n_rows = batch.rows.size();
  const std::size_t n_docs = f.doc_vecs.size();
  const std::size_t h = m.dim;
  const double inv_rows = 1.0 / static_cast<double>(n_rows);

  Gradients g = Gradients::zeros_like(m);
  std::vector<Vec> d_query_vec(n_rows, Vec(h, 0.0));
  std::vector<Vec> d_doc_vec(n_docs, Vec(h, 0.0));

  double total = 0.0;
  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t pos = f.pos_index[r];
    const std::string& pos_id = *f.doc_of[pos];
    std::vector<std::size_t> cand;
    std::vector<double> scores;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n_docs; ++t) {
      if (t != pos && *f.doc_of[t] == pos_id) continue;
      cand.push_back(t);
      scores.push_back(similarity(f.query_vecs[r], f.doc_vecs[t]));
      mx = std::max(mx, scores.back());
    }
    double lse = 0.0;
    for (double s : scores) lse += std::exp(s - mx);
    double pos_score = 0.0;
    for (std::size_t i = 0; i < cand.size(); ++i)
      if (cand[i] == pos) pos_score = scores[i];
    total += -(pos_score - mx - std::log(lse));

    for (std::size_t i = 0; i < cand.size(); ++i) {
      const std::size_t t = cand[i];
      const double p = std::exp(scores[i] - mx) / lse;
      const double coeff = (p - (t == pos ? 1.0 : 0.0)) * inv_rows;
      if (coeff == 0.0) continue;
      for (std::size_t c = 0; c < h; ++c) {
        d_query_vec[r][c] += coeff * f.doc_vecs[t][c];
        d_doc_vec[t][c] += coeff * f.query_vecs[r][c];
      }
    }
  }

  // Backprop through projections and mean pooling.
  for (std::size_t r = 0; r < n_rows; ++r) {
    const Vec& dv = d_query_vec[r];
    const Vec& u = f.query_means[r];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j)
        g.query_proj.at(i, j) += dv[i] * u[j];
    Vec du(h, 0.0);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j)
        du[j] += m.query_proj.at(i, j) * dv[i];
    const double inv_len = 1.0 / static_cast<double>(f.query_ids[r].size());
    for (std::uint32_t id : f.query_ids[r]) {
      double* row = g.query_embeddings.row(id);
      for (std::size_t c = 0; c < h; ++c) row[c] += du[c] * inv_len;
    }
  }
  for (std::size_t t = 0; t < n_docs; ++t) {
    const Vec& dv = d_doc_vec[t];
    const Vec& w = f.doc_means[t];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j)
        g.doc_proj.at(i, j) += dv[i] * w[j];
    Vec dw(h, 0.0);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j)
        dw[j] += m.doc_proj.at(i, j) * dv[i];
    const double inv_len = 1.0 / static_cast<double>(f.doc_ids[t].size());
    for (std::uint32_t id : f.doc_ids[t]) {
      double* row = g.doc_embeddings.row(id);
      for (std::size_t c = 0; c < h; ++c) row[c] += dw[c] * inv_len;
    }
  }

  return {total * inv_rows, std::move(g)};
}

/// Central-difference check of the analytic gradients over a deterministic
/// random subsample of coordinates. Returns the maximum guarded relative
/// error |a - fd| / max(1e-6, |a|, |fd|).
inline double finite_difference_check(const EncoderModel& model,
                                      const TokenVocab& vocab,
                                      const TrainingBatch& batch, double eps,
                                      std::size_t n_coords = 200,
                                      std::uint64_t seed = 17,
                                      const EncodeLimits& lim = {}) {
  if (!(eps > 0.0)) throw config_error("finite_difference_check: eps must be > 0");
  EncoderModel m = model;  // perturbed in place, restored after each probe
  auto [loss, grads] = loss_and_gradients(m, vocab, batch, lim);
  (void)loss;

  struct Slot {
    Mat* param;
    const Mat* grad;
  };
  std::vector<Slot> slots = {
      {&m.query_embeddings, &grads.query_embeddings},
      {&m.doc_embeddings, &grads.doc_embeddings},
      {&m.query_proj, &grads.query_proj},
      {&m.doc_proj, &grads.doc_proj},
  };
  std::size_t total_coords = 0;
  for (const Slot& s : slots) total_coords += s.param->a.size();

  Rng rng(seed);
  double max_rel = 0.0;
  for (std::size_t i = 0; i < n_coords; ++i) {
    std::size_t flat = uniform_index(rng, total_coords);
    Mat* param = nullptr;
    const Mat* grad = nullptr;
    for (const Slot& s : slots) {
      if (flat < s.param->a.size()) {
        param = s.param;
        grad = s.grad;
        break;
      }
      flat -= s.param->a.size();
    }
    const double saved = param->a[flat];
    param->a[flat] = saved + eps;
    const double lp = contrastive_loss(m, vocab, batch, lim);
    param->a[flat] = saved - eps;
    const double lm = contrastive_loss(m, vocab, batch, lim);
    param->a[flat] = saved;
    const double fd = (lp - lm) / (2.0 * eps);
    const double an = grad->a[flat];
    const double denom = std::max({1e-6, std::fabs(an), std::fabs(fd)});
    max_rel = std::max(max_rel, std::fabs(an - fd) / denom);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "CAPSTONE" magic, u32 version, u32 pad, u64 config
// hash, u64 V, u64 h, then the four tensors as row-major doubles. Bit-exact
// round-trip.
// ---------------------------------------------------------------------------

inline constexpr char kModelMagic[8] = {'C', 'A', 'P', 'S', 'T', 'O', 'N', 'E'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

template <typename T>
void put_raw(std::string& out, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <typename T>
T get_raw(const std::string& data, std::size_t& off) {
  if (off + sizeof(T) > data.size()) throw parse_error("truncated checkpoint");
  T v;
  std::memcpy(&v, data.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace detail

inline void save_model(const EncoderModel& m, const std::filesystem::path& path,
                       std::uint64_t config_hash = 0) {
  std::string out;
  out.append(kModelMagic, sizeof(kModelMagic));
  detail::put_raw(out, kModelVersion);
  detail::put_raw(out, std::uint32_t{0});
  detail::put_raw(out, config_hash);
  detail::put_raw(out, static_cast<std::uint64_t>(m.vocab_size));
  detail::put_raw(out, static_cast<std::uint64_t>(m.dim));
  for (const Mat* t :
       {&m.query_embeddings, &m.doc_embeddings, &m.query_proj, &m.doc_proj})
    out.append(reinterpret_cast<const char*>(t->a.data()),
               t->a.size() * sizeof(double));
  write_file(path, out);
}

inline EncoderModel load_model(const std::filesystem::path& path,
                               std::uint64_t* config_hash = nullptr) {
  const std::string data = read_file(path);
  if (data.size() < sizeof(kModelMagic) ||
      std::memcmp(data.data(), kModelMagic, sizeof(kModelMagic)) != 0)
    throw parse_error(path.string() + ": not a capstone checkpoint");
  std::size_t off = sizeof(kModelMagic);
  const auto version = detail::get_raw<std::uint32_t>(data, off);
  if (version != kModelVersion)
    throw parse_error(path.string() + ": unsupported checkpoint version " +
                      std::to_string(version));
  detail::get_raw<std::uint32_t>(data, off);  // pad
  const auto hash = detail::get_raw<std::uint64_t>(data, off);
  if (config_hash) *config_hash = hash;
  EncoderModel m;
  m.vocab_size = detail::get_raw<std::uint64_t>(data, off);
  m.dim = detail::get_raw<std::uint64_t>(data, off);
  auto read_mat = [&](std::size_t r, std::size_t c) {
    Mat t = Mat::zeros(r, c);
    const std::size_t bytes = t.a.size() * sizeof(double);
    if (off + bytes > data.size())
      throw parse_error(path.string() + ": truncated checkpoint tensors");
    std::memcpy(t.a.data(), data.data() + off, bytes);
    off += bytes;
    return t;
  };
  m.query_embeddings = read_mat(m.vocab_size, m.dim);
  m.doc_embeddings = read_mat(m.vocab_size, m.dim);
  m.query_proj = read_mat(m.dim, m.dim);
  m.doc_proj = read_mat(m.dim, m.dim);
  if (off != data.size())
    throw parse_error(path.string() + ": trailing bytes in checkpoint");
  return m;
}

}  // namespace capstone
