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

#include "capstone/textmetrics.hpp"
#include "testutil.hpp"

using namespace capstone;

namespace {

// Exhaustive LCS oracle: enumerate every subsequence of `a` and keep the
// longest that is also a subsequence of `b`. Exponential, test-only.
bool is_subsequence(const Tokens& needle, const Tokens& hay) {
  std::size_t i = 0;
  for (const auto& t : hay) {
    if (i < needle.size() && needle[i] == t) ++i;
  }
  return i == needle.size();
}

std::size_t lcs_oracle(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  const std::size_t masks = std::size_t{1} << a.size();
  for (std::size_t mask = 0; mask < masks; ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask & (std::size_t{1} << i)) sub.push_back(a[i]);
    if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
  }
  return best;
}

Corpus two_doc_corpus() {
  Corpus c;
  c.add({"d1", {"x", "a", "b", "c"}});
  c.add({"d2", {"p", "q", "r", "s"}});
  return c;
}

}  // namespace

TEST_CASE("lcs_length basics") {
  CHECK(lcs_length({"a", "b", "c"}, {"a", "b", "c"}) == 3);
  CHECK(lcs_length({"a", "b"}, {"c", "d"}) == 0);
  CHECK(lcs_length({"a", "b", "c", "d"}, {"a", "c", "d", "e"}) == 3);
  CHECK(lcs_length({}, {"a"}) == 0);
}

TEST_CASE("lcs_length matches the exhaustive oracle") {
  Rng rng(41);
  for (int it = 0; it < 200; ++it) {
    const auto a = testutil::random_tokens(rng, 1 + uniform_index(rng, 10), 5);
    const auto b = testutil::random_tokens(rng, 1 + uniform_index(rng, 10), 5);
    CHECK(lcs_length(a, b) == lcs_oracle(a, b));
  }
}

TEST_CASE("lcs_length bounds") {
  Rng rng(42);
  for (int it = 0; it < 100; ++it) {
    const auto a = testutil::random_tokens(rng, 1 + uniform_index(rng, 12), 4);
    const auto b = testutil::random_tokens(rng, 1 + uniform_index(rng, 12), 4);
    CHECK(lcs_length(a, b) <= std::min(a.size(), b.size()));
    CHECK(lcs_length(a, a) == a.size());
  }
}

TEST_CASE("rouge_l values") {
  CHECK(rouge_l({"a", "b", "c"}, {"a", "b", "c"}) == 1.0);
  CHECK(rouge_l({"a", "b"}, {"c", "d"}) == 0.0);
  // LCS = 3, P = R = 3/4, F = 0.75
  CHECK(rouge_l({"a", "b", "c", "d"}, {"a", "c", "d", "e"}) ==
        Catch::Approx(0.75).margin(1e-12));
  CHECK_THROWS_AS(rouge_l({}, {"a"}), validation_error);
  CHECK_THROWS_AS(rouge_l({"a"}, {}), validation_error);
}

TEST_CASE("rouge_l stays in [0,1] on random inputs") {
  Rng rng(43);
  for (int it = 0; it < 300; ++it) {
    const auto a = testutil::random_tokens(rng, 1 + uniform_index(rng, 15), 6);
    const auto b = testutil::random_tokens(rng, 1 + uniform_index(rng, 15), 6);
    const double f = rouge_l(a, b);
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
    CHECK(rouge_l(a, a) == 1.0);
  }
}

TEST_CASE("bm25_score hand-checked value") {
  Corpus c = two_doc_corpus();
  const CorpusStats stats = CorpusStats::from_corpus(c);
  CHECK(stats.doc_count == 2);
  CHECK(stats.avg_doc_len == Catch::Approx(4.0));
  CHECK(stats.doc_freq.at("x") == 1);
  // N=2, df=1, tf=1, len=avg: idf = ln 2, tf part = 1.9/1.9 = 1.
  const double s = bm25_score({"x"}, "d1", stats, term_counts(c.at(0)));
  CHECK(s == Catch::Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("bm25_score edge cases") {
  Corpus c = two_doc_corpus();
  const CorpusStats stats = CorpusStats::from_corpus(c);
  CHECK(bm25_score({"x"}, "d2", stats, term_counts(c.at(1))) == 0.0);
  CHECK(bm25_score({}, "d1", stats, term_counts(c.at(0))) == 0.0);
  CHECK_THROWS_AS(bm25_score({"x"}, "nope", stats, {}), validation_error);
}

TEST_CASE("bm25 top_k basics") {
  Corpus c;
  c.add({"db", {"x", "y"}});
  c.add({"da", {"x", "y"}});
  c.add({"dc", {"p", "q"}});
  Bm25Scorer scorer(c);
  auto top = scorer.top_k({"x"}, 10);
  REQUIRE(top.size() == 3);  // k larger than N returns N
  // da and db tie; lexicographically smaller id first
  CHECK(top[0].doc_id == "da");
  CHECK(top[1].doc_id == "db");
  CHECK(top[2].doc_id == "dc");
  CHECK_THROWS_AS(scorer.top_k({"x"}, 0), config_error);
}

TEST_CASE("bm25 top_k is a prefix of the brute-force ranking") {
  Rng rng(44);
  for (int it = 0; it < 10; ++it) {
    Corpus c;
    const std::size_t n = 20 + uniform_index(rng, 100);
    for (std::size_t i = 0; i < n; ++i) {
      c.add({"d" + std::to_string(i),
             testutil::random_tokens(rng, 3 + uniform_index(rng, 20), 30)});
    }
    Bm25Scorer scorer(c);
    const auto query = testutil::random_tokens(rng, 1 + uniform_index(rng, 4), 30);

    std::vector<ScoredDoc> brute;
    for (std::size_t i = 0; i < n; ++i)
      brute.push_back({c.at(i).id, scorer.score(query, i)});
    std::sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc_id < b.doc_id;
    });

    const std::size_t k = 1 + uniform_index(rng, n);
    const auto top = scorer.top_k(query, k);
    REQUIRE(top.size() == k);
    for (std::size_t i = 0; i < k; ++i) {
      CHECK(top[i].doc_id == brute[i].doc_id);
      CHECK(top[i].score == brute[i].score);
    }
  }
}
