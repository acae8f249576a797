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

#include <catch2/catch_amalgamated.hpp>

#include "capstone/index.hpp"
#include "testutil.hpp"

using namespace capstone;

namespace {

struct Fixture {
  Corpus corpus;
  GeneratedQueryStore store;
  TokenVocab vocab;
  EncoderModel model;

  explicit Fixture(std::size_t n_docs = 12, std::size_t queries_per_doc = 3) {
    Rng rng(81);
    for (std::size_t i = 0; i < n_docs; ++i) {
      corpus.add({"d" + std::to_string(i),
                  testutil::random_tokens(rng, 6 + uniform_index(rng, 6), 40)});
      auto& qs = store.by_doc["d" + std::to_string(i)];
      for (std::size_t j = 0; j < queries_per_doc; ++j)
        qs.push_back(testutil::random_tokens(rng, 2 + uniform_index(rng, 3), 40));
    }
    vocab = TokenVocab::build(corpus, &store);
    model = init_model(vocab.size(), 8, 82);
    Rng prng(83);
    for (double& x : model.doc_proj.a) x = uniform_real(prng) - 0.5;
    for (double& x : model.query_proj.a) x = uniform_real(prng) - 0.5;
  }
};

// Brute-force search oracle: naive per-row scoring, per-doc best view,
// sort by (score desc, id asc), truncate.
std::vector<std::string> search_oracle(const RetrievalIndex& idx,
                                       const Vec& query, std::size_t m) {
  std::map<std::string, double> best;
  for (std::size_t r = 0; r < idx.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < idx.dim; ++c)
      s += query[c] * static_cast<double>(idx.row(r)[c]);
    const std::string& id = idx.doc_ids[idx.row_doc[r]];
    auto it = best.find(id);
    if (it == best.end() || s > it->second) best[id] = s;
  }
  std::vector<std::pair<std::string, double>> order(best.begin(), best.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < std::min(m, order.size()); ++i)
    ids.push_back(order[i].first);
  return ids;
}

RetrievalIndex random_index(Rng& rng, std::size_t n_docs, std::size_t s,
                            std::size_t dim) {
  RetrievalIndex idx;
  idx.mode = s > 1 ? IndexMode::corpus_expansion : IndexMode::no_expansion;
  idx.n_docs = n_docs;
  idx.dim = dim;
  idx.s = s;
  for (std::size_t i = 0; i < n_docs; ++i)
    idx.doc_ids.push_back("d" + std::to_string(i));
  idx.vectors.resize(n_docs * s * dim);
  for (float& x : idx.vectors)
    x = static_cast<float>(uniform_real(rng) * 2.0 - 1.0);
  idx.row_doc.resize(n_docs * s);
  for (std::size_t i = 0; i < n_docs; ++i)
    for (std::size_t j = 0; j < s; ++j)
      idx.row_doc[i * s + j] = static_cast<std::uint32_t>(i);
  return idx;
}

}  // namespace

TEST_CASE("encode_corpus_views cycles short pools") {
  Fixture f;
  DocumentViewMatrix vm = encode_corpus_views(f.model, f.vocab, f.corpus,
                                              f.store, 5);
  REQUIRE(vm.views.size() == f.corpus.size());
  for (std::size_t i = 0; i < f.corpus.size(); ++i) {
    const Document& d = f.corpus.at(i);
    const auto& qs = f.store.of(d.id);
    REQUIRE(vm.views[i].size() == 5);
    for (std::size_t j = 0; j < 5; ++j) {
      const Tokens& q = qs[j % qs.size()];
      Vec want = encode_document(f.model, f.vocab, d.tokens, {&q, 1});
      CHECK(vm.views[i][j] == want);
    }
  }
  // doc with 3 queries, S=5: views reuse queries [0,1,2,0,1]
  CHECK(vm.views[0][3] == vm.views[0][0]);
  CHECK(vm.views[0][4] == vm.views[0][1]);
}

TEST_CASE("encode_corpus_views with S=1 gives one view per doc") {
  Fixture f;
  DocumentViewMatrix vm = encode_corpus_views(f.model, f.vocab, f.corpus,
                                              f.store, 1);
  for (const auto& views : vm.views) CHECK(views.size() == 1);
  CHECK_THROWS_AS(encode_corpus_views(f.model, f.vocab, f.corpus, f.store, 0),
                  config_error);
}

TEST_CASE("encode_corpus_views errors when a document has no queries") {
  Fixture f;
  GeneratedQueryStore partial = f.store;
  partial.by_doc.erase("d3");
  CHECK_THROWS_AS(encode_corpus_views(f.model, f.vocab, f.corpus, partial, 2),
                  config_error);
}

TEST_CASE("pool_views modes") {
  std::vector<Vec> two = {{1.0, 3.0}, {3.0, 5.0}};
  CHECK(pool_views(two, Pooling::average) == Vec{2.0, 4.0});
  CHECK(pool_views(two, Pooling::max) == Vec{3.0, 5.0});
  // even count median: mean of the two middle values
  CHECK(pool_views(two, Pooling::median) == Vec{2.0, 4.0});
  std::vector<Vec> three = {{1.0}, {2.0}, {9.0}};
  CHECK(pool_views(three, Pooling::median) == Vec{2.0});
  CHECK_THROWS_AS(pool_views({}, Pooling::average), config_error);
}

TEST_CASE("pool_views average equals an independent component mean") {
  Rng rng(84);
  for (int it = 0; it < 20; ++it) {
    const std::size_t n = 1 + uniform_index(rng, 7), h = 5;
    std::vector<Vec> views(n, Vec(h));
    for (auto& v : views)
      for (auto& x : v) x = uniform_real(rng) * 4 - 2;
    Vec got = pool_views(views, Pooling::average);
    for (std::size_t c = 0; c < h; ++c) {
      double sum = 0.0;
      for (const auto& v : views) sum += v[c];
      CHECK(std::fabs(got[c] - sum / n) <= 1e-12);
    }
  }
}

TEST_CASE("build_index shapes per mode") {
  Fixture f;
  const std::size_t n = f.corpus.size();
  RetrievalIndex ne = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::no_expansion, 1);
  CHECK(ne.rows() == n);
  RetrievalIndex ce = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::corpus_expansion, 4);
  CHECK(ce.rows() == n * 4);
  RetrievalIndex ty = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::typical, 4);
  CHECK(ty.rows() == n);
  RetrievalIndex de = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::document_expansion, 4);
  CHECK(de.rows() == n);
  CHECK_THROWS_AS(build_index(f.model, f.vocab, f.corpus, nullptr,
                              IndexMode::typical, 4),
                  config_error);
}

TEST_CASE("no_expansion rows equal plain document encodings") {
  Fixture f;
  RetrievalIndex ne = build_index(f.model, f.vocab, f.corpus, nullptr,
                                  IndexMode::no_expansion, 1);
  for (std::size_t i = 0; i < f.corpus.size(); ++i) {
    Vec want = encode_document(f.model, f.vocab, f.corpus.at(i).tokens);
    for (std::size_t c = 0; c < ne.dim; ++c)
      CHECK(ne.row(i)[c] == static_cast<float>(want[c]));
  }
}

TEST_CASE("typical with S=1 equals corpus expansion with S=1 row-for-row") {
  Fixture f;
  RetrievalIndex ty = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::typical, 1);
  RetrievalIndex ce = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::corpus_expansion, 1);
  REQUIRE(ty.rows() == ce.rows());
  CHECK(ty.vectors == ce.vectors);
  CHECK(ty.row_doc == ce.row_doc);
}

TEST_CASE("document expansion differs from the typical representation") {
  Fixture f;
  RetrievalIndex ty = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::typical, 3);
  RetrievalIndex de = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::document_expansion, 3);
  CHECK(ty.vectors != de.vectors);
  RetrievalIndex as = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::asymmetric, 3);
  CHECK(as.vectors == de.vectors);  // same construction, distinct mode
  CHECK(as.mode == IndexMode::asymmetric);
}

TEST_CASE("search on a single-row index returns that doc for any M") {
  Rng rng(85);
  RetrievalIndex idx = random_index(rng, 1, 1, 4);
  for (std::size_t m : {1u, 5u, 100u}) {
    SearchResult res = search(idx, Vec{1, 2, 3, 4}, m);
    REQUIRE(res.hits.size() == 1);
    CHECK(res.hits[0].doc_id == "d0");
  }
  CHECK_THROWS_AS(search(idx, Vec{1, 2, 3, 4}, 0), config_error);
  CHECK_THROWS_AS(search(idx, Vec{1, 2}, 1), validation_error);
  RetrievalIndex empty;
  empty.dim = 4;
  CHECK_THROWS_AS(search(empty, Vec{1, 2, 3, 4}, 1), config_error);
}

TEST_CASE("search dedups duplicate views and keeps the best") {
  RetrievalIndex idx;
  idx.mode = IndexMode::corpus_expansion;
  idx.n_docs = 2;
  idx.dim = 1;
  idx.s = 2;
  idx.doc_ids = {"da", "db"};
  // da's two views take the top-2 raw rows; db fills rank 2 after dedup
  idx.vectors = {10.0f, 9.0f, 5.0f, 1.0f};
  idx.row_doc = {0, 0, 1, 1};
  SearchResult res = search(idx, Vec{1.0}, 2);
  REQUIRE(res.hits.size() == 2);
  CHECK(res.hits[0].doc_id == "da");
  CHECK(res.hits[0].score == 10.0);
  CHECK(res.hits[1].doc_id == "db");
  CHECK(res.hits[1].score == 5.0);
}

TEST_CASE("search breaks score ties by doc-id ascending") {
  RetrievalIndex idx;
  idx.mode = IndexMode::no_expansion;
  idx.n_docs = 3;
  idx.dim = 1;
  idx.s = 1;
  idx.doc_ids = {"dz", "da", "dm"};
  idx.vectors = {1.0f, 1.0f, 0.5f};
  idx.row_doc = {0, 1, 2};
  SearchResult res = search(idx, Vec{1.0}, 3);
  CHECK(res.hits[0].doc_id == "da");
  CHECK(res.hits[1].doc_id == "dz");
  CHECK(res.hits[2].doc_id == "dm");
}

TEST_CASE("search agrees with the brute-force oracle on random indexes") {
  Rng rng(86);
  for (int it = 0; it < 25; ++it) {
    const std::size_t n = 20 + uniform_index(rng, 280);
    const std::size_t s = 1 + uniform_index(rng, 4);
    const std::size_t dim = 4 + uniform_index(rng, 12);
    RetrievalIndex idx = random_index(rng, n, s, dim);
    Vec q(dim);
    for (auto& x : q) x = uniform_real(rng) * 2 - 1;
    const std::size_t m = 1 + uniform_index(rng, 50);
    SearchResult res = search(idx, q, m);
    const auto want = search_oracle(idx, q, m);
    REQUIRE(res.hits.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(res.hits[i].doc_id == want[i]);
    for (std::size_t i = 0; i + 1 < res.hits.size(); ++i)
      CHECK(res.hits[i].score >= res.hits[i + 1].score);
  }
}

TEST_CASE("dedup never changes the top-1 document") {
  Rng rng(87);
  for (int it = 0; it < 15; ++it) {
    RetrievalIndex idx = random_index(rng, 30, 3, 6);
    Vec q(6);
    for (auto& x : q) x = uniform_real(rng) * 2 - 1;
    // raw best row
    std::size_t best_row = 0;
    double best_score = -1e300;
    for (std::size_t r = 0; r < idx.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < idx.dim; ++c)
        s += q[c] * static_cast<double>(idx.row(r)[c]);
      if (s > best_score) {
        best_score = s;
        best_row = r;
      }
    }
    SearchResult res = search(idx, q, 5);
    CHECK(res.hits[0].doc_id == idx.doc_ids[idx.row_doc[best_row]]);
  }
}

TEST_CASE("index files round-trip bit-exactly") {
  Fixture f;
  RetrievalIndex idx = build_index(f.model, f.vocab, f.corpus, &f.store,
                                   IndexMode::corpus_expansion, 3);
  testutil::TempDir dir("idx");
  save_index(idx, dir / "i.bin", 99);
  std::uint64_t hash = 0;
  RetrievalIndex l = load_index(dir / "i.bin", &hash);
  CHECK(hash == 99);
  CHECK(l.mode == idx.mode);
  CHECK(l.n_docs == idx.n_docs);
  CHECK(l.dim == idx.dim);
  CHECK(l.s == idx.s);
  CHECK(l.vectors == idx.vectors);
  CHECK(l.doc_ids == idx.doc_ids);
  CHECK(l.row_doc == idx.row_doc);
  save_index(l, dir / "i2.bin", 99);
  CHECK(read_file(dir / "i.bin") == read_file(dir / "i2.bin"));
  write_file(dir / "junk.bin", "nope");
  CHECK_THROWS_AS(load_index(dir / "junk.bin"), parse_error);
}

TEST_CASE("run files round-trip") {
  Run run;
  run.emplace_back("q2", SearchResult{{{"d1", 3.25}, {"d9", 1.0}}});
  run.emplace_back("q1", SearchResult{{{"d4", 0.125}}});
  testutil::TempDir dir("run");
  save_run_file(run, dir / "r.trec", "tag1");
  auto loaded = load_run_file(dir / "r.trec");
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("q2")[0].doc_id == "d1");
  CHECK(loaded.at("q2")[0].score == Catch::Approx(3.25));
  CHECK(loaded.at("q2")[1].doc_id == "d9");
  CHECK(loaded.at("q1")[0].doc_id == "d4");
  const std::string text = read_file(dir / "r.trec");
  CHECK(text.find("q2 Q0 d1 1 3.250000 tag1") == 0);

  write_file(dir / "bad.trec", "q1 Q0 d1 2 1.0 tag\n");
  CHECK_THROWS_AS(load_run_file(dir / "bad.trec"), parse_error);
}

TEST_CASE("corpus expansion multiplies the row count by S") {
  Fixture f(100, 10);
  RetrievalIndex ce = build_index(f.model, f.vocab, f.corpus, &f.store,
                                  IndexMode::corpus_expansion, 10);
  CHECK(ce.rows() == 1000);
  CHECK(ce.n_docs == 100);
  for (std::size_t r = 0; r < ce.rows(); ++r)
    CHECK(ce.row_doc[r] == r / 10);
}

TEST_CASE("index builds are deterministic and thread-count independent") {
  Fixture f;
  RetrievalIndex a = build_index(f.model, f.vocab, f.corpus, &f.store,
                                 IndexMode::typical, 3, Pooling::average, {}, 1);
  RetrievalIndex b = build_index(f.model, f.vocab, f.corpus, &f.store,
                                 IndexMode::typical, 3, Pooling::average, {}, 4);
  CHECK(a.vectors == b.vectors);
}
