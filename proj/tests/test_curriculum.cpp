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

#include "capstone/curriculum.hpp"
#include "testutil.hpp"

using namespace capstone;

namespace {

RankedQueryPool pool_with_scores(const std::vector<double>& scores) {
  RankedQueryPool p;
  p.doc_id = "d";
  for (std::size_t i = 0; i < scores.size(); ++i)
    p.entries.push_back({{"tok" + std::to_string(i)}, scores[i], i});
  return p;
}

}  // namespace

TEST_CASE("rank_query_pool sorts ascending by ROUGE-L") {
  Query gold{"q", {"a", "b", "c", "d", "e"}};
  // rouge to gold: high, zero, mid
  std::vector<Tokens> generated = {
      {"a", "b", "c", "d", "e"},  // 1.0
      {"x", "y"},                 // 0.0
      {"a", "b", "x", "y", "z"},  // 0.4
  };
  RankedQueryPool pool = rank_query_pool(gold, generated, "d1");
  REQUIRE(pool.entries.size() == 3);
  CHECK(pool.entries[0].source_index == 1);
  CHECK(pool.entries[1].source_index == 2);
  CHECK(pool.entries[2].source_index == 0);
  for (std::size_t i = 0; i + 1 < pool.entries.size(); ++i)
    CHECK(pool.entries[i].score <= pool.entries[i + 1].score);
}

TEST_CASE("rank_query_pool keeps input order among ties") {
  Query gold{"q", {"a", "b"}};
  std::vector<Tokens> generated = {{"x"}, {"y"}, {"a", "b"}};
  RankedQueryPool pool = rank_query_pool(gold, generated);
  CHECK(pool.entries[0].source_index == 0);
  CHECK(pool.entries[1].source_index == 1);
  CHECK(pool.entries[2].source_index == 2);
  CHECK_THROWS_AS(rank_query_pool(gold, {}), config_error);
}

TEST_CASE("rank_query_pool single entry") {
  Query gold{"q", {"a"}};
  RankedQueryPool pool = rank_query_pool(gold, {{"a"}});
  REQUIRE(pool.entries.size() == 1);
  CHECK(pool.entries[0].score == 1.0);
}

TEST_CASE("partition_groups splits evenly with remainder to the front") {
  auto p80 = partition_groups(pool_with_scores(std::vector<double>(80, 0.5)), 4);
  REQUIRE(p80.k == 4);
  for (const auto& [b, e] : p80.ranges) CHECK(e - b == 20);

  auto p10 = partition_groups(pool_with_scores(std::vector<double>(10, 0.5)), 3);
  REQUIRE(p10.k == 3);
  CHECK(p10.ranges[0] == std::make_pair<std::size_t, std::size_t>(0, 4));
  CHECK(p10.ranges[1] == std::make_pair<std::size_t, std::size_t>(4, 7));
  CHECK(p10.ranges[2] == std::make_pair<std::size_t, std::size_t>(7, 10));
  CHECK_FALSE(p10.clamped);
}

TEST_CASE("partition_groups clamps K to the pool size") {
  auto p = partition_groups(pool_with_scores({0.1, 0.9}), 4);
  CHECK(p.k == 2);
  CHECK(p.clamped);
  CHECK(p.ranges[0] == std::make_pair<std::size_t, std::size_t>(0, 1));
  CHECK(p.ranges[1] == std::make_pair<std::size_t, std::size_t>(1, 2));

  RankedQueryPool empty;
  CHECK_THROWS_AS(partition_groups(empty, 3), config_error);
  CHECK_THROWS_AS(partition_groups(pool_with_scores({0.5}), 0), config_error);
}

TEST_CASE("phase_of_step maps steps to contiguous phases") {
  CHECK(phase_of_step(0, 300, 3) == 0);
  CHECK(phase_of_step(150, 300, 3) == 1);
  CHECK(phase_of_step(299, 300, 3) == 2);
  CHECK_THROWS_AS(phase_of_step(300, 300, 3), config_error);
  CHECK_THROWS_AS(phase_of_step(0, 2, 3), config_error);
}

TEST_CASE("phase_of_step is non-decreasing and surjective") {
  for (auto [total, k] : {std::pair<std::size_t, std::size_t>{300, 3},
                          {10, 4},
                          {7, 7},
                          {1000, 6}}) {
    std::set<std::size_t> seen;
    std::size_t prev = 0;
    for (std::size_t step = 0; step < total; ++step) {
      const std::size_t g = phase_of_step(step, total, k);
      CHECK(g >= prev);
      CHECK(g < k);
      prev = g;
      seen.insert(g);
    }
    CHECK(seen.size() == k);
  }
}

TEST_CASE("select_expansion_query strategies") {
  Rng rng(3);
  RankedQueryPool pool = pool_with_scores({0.0, 0.2, 0.5, 0.8, 1.0});
  Query gold{"q", {"g", "o", "l", "d"}};
  StepContext ctx{0, 100, 4};

  SECTION("none gives no expansion") {
    auto sel = select_expansion_query({StrategyKind::none, 1}, &pool, gold, ctx, rng);
    CHECK_FALSE(sel.has_value());
  }
  SECTION("gold returns the gold query tokens") {
    auto sel = select_expansion_query({StrategyKind::gold, 1}, nullptr, gold, ctx, rng);
    REQUIRE(sel.has_value());
    CHECK(sel->tokens == gold.tokens);
    CHECK(sel->score == 1.0);
  }
  SECTION("top_k with k=1 picks the highest-scored entry deterministically") {
    for (int i = 0; i < 10; ++i) {
      auto sel =
          select_expansion_query({StrategyKind::top_k, 1}, &pool, gold, ctx, rng);
      REQUIRE(sel.has_value());
      CHECK(sel->pool_index == 4);
      CHECK(sel->score == 1.0);
    }
  }
  SECTION("bottom_k with k=2 samples from the two lowest entries") {
    for (int i = 0; i < 20; ++i) {
      auto sel = select_expansion_query({StrategyKind::bottom_k, 2}, &pool, gold,
                                        ctx, rng);
      REQUIRE(sel.has_value());
      CHECK(sel->pool_index <= 1);
    }
  }
  SECTION("random samples uniformly over the pool") {
    std::set<std::size_t> seen;
    for (int i = 0; i < 200; ++i) {
      auto sel = select_expansion_query({StrategyKind::random_pick, 1}, &pool,
                                        gold, ctx, rng);
      seen.insert(sel->pool_index);
    }
    CHECK(seen.size() == 5);
  }
  SECTION("pool required for generated strategies") {
    CHECK_THROWS_AS(select_expansion_query({StrategyKind::curriculum, 1},
                                           nullptr, gold, ctx, rng),
                    config_error);
  }
  SECTION("curriculum at step 0 samples from the lowest group") {
    for (int i = 0; i < 20; ++i) {
      auto sel = select_expansion_query({StrategyKind::curriculum, 1}, &pool,
                                        gold, ctx, rng);
      REQUIRE(sel.has_value());
      CHECK(sel->group == 0);
      // first group of 5 entries with K=4 holds the two lowest entries
      CHECK(sel->pool_index <= 1);
    }
  }
}

TEST_CASE("curriculum samples stay inside the scheduled group") {
  Rng rng(17);
  RankedQueryPool pool = pool_with_scores({0.0, 0.1, 0.3, 0.5, 0.7, 0.8, 0.95});
  Query gold{"q", {"g"}};
  const std::size_t total = 200, k = 4;
  GroupPartition part = partition_groups(pool, k);
  std::vector<double> phase_sum(k, 0.0);
  std::vector<std::size_t> phase_n(k, 0);
  for (int rep = 0; rep < 50; ++rep) {
    for (std::size_t step = 0; step < total; ++step) {
      StepContext ctx{step, total, k};
      auto sel = select_expansion_query({StrategyKind::curriculum, 1}, &pool,
                                        gold, ctx, rng);
      REQUIRE(sel.has_value());
      const std::size_t g = phase_of_step(step, total, k);
      CHECK(sel->group == g);
      auto [lo, hi] = part.ranges[g];
      CHECK(sel->pool_index >= lo);
      CHECK(sel->pool_index < hi);
      phase_sum[g] += sel->score;
      ++phase_n[g];
    }
  }
  // 10^4 samples in total; per-phase mean score is non-decreasing
  std::size_t n_total = 0;
  for (std::size_t g = 0; g < k; ++g) n_total += phase_n[g];
  CHECK(n_total == 10000);
  for (std::size_t g = 0; g + 1 < k; ++g)
    CHECK(phase_sum[g] / phase_n[g] <= phase_sum[g + 1] / phase_n[g + 1] + 1e-12);
}

TEST_CASE("strategy parsing and naming") {
  CHECK(SelectionStrategy::parse("none").kind == StrategyKind::none);
  CHECK(SelectionStrategy::parse("gold").kind == StrategyKind::gold);
  CHECK(SelectionStrategy::parse("random").kind == StrategyKind::random_pick);
  CHECK(SelectionStrategy::parse("curriculum").kind == StrategyKind::curriculum);
  auto t = SelectionStrategy::parse("top_3");
  CHECK(t.kind == StrategyKind::top_k);
  CHECK(t.k == 3);
  CHECK(t.to_string() == "top_3");
  auto b = SelectionStrategy::parse("bottom_k");
  CHECK(b.kind == StrategyKind::bottom_k);
  CHECK(b.k == 1);
  CHECK(SelectionStrategy::parse("top").k == 1);
  CHECK_THROWS_AS(SelectionStrategy::parse("bogus"), config_error);
}

TEST_CASE("pool cache round-trips") {
  Query gold{"q", {"a", "b", "c"}};
  std::vector<Tokens> generated = {{"a", "x"}, {"a", "b", "c"}, {"z"}};
  PoolMap pools;
  pools.emplace("d1", rank_query_pool(gold, generated, "d1"));
  pools.emplace("d2", rank_query_pool(gold, generated, "d2"));

  testutil::TempDir dir("pools");
  save_pools(pools, dir / "pools.tsv", "config_hash=test");
  PoolMap loaded = load_pools(dir / "pools.tsv");
  REQUIRE(loaded.size() == 2);
  for (const auto& [docid, pool] : pools) {
    const RankedQueryPool& got = loaded.at(docid);
    REQUIRE(got.entries.size() == pool.entries.size());
    for (std::size_t i = 0; i < pool.entries.size(); ++i) {
      CHECK(got.entries[i].query == pool.entries[i].query);
      CHECK(got.entries[i].score == pool.entries[i].score);
    }
  }
}

TEST_CASE("rank_all_pools falls back to salient gold queries") {
  Corpus c;
  c.add({"d1", {"a", "a", "b"}});
  c.add({"d2", {"x", "y", "y"}});
  GeneratedQueryStore store;
  store.by_doc["d1"] = {{"a"}, {"z"}};
  store.by_doc["d2"] = {{"y"}};
  std::map<std::string, Query> golds;
  golds.emplace("d1", Query{"q1", {"a", "b"}});
  PoolMap pools = rank_all_pools(c, store, golds, true, 2);
  CHECK(pools.at("d1").gold_query_id == "q1");
  CHECK(pools.at("d2").gold_query_id == "synthetic:d2");
  // salient gold for d2 is [y, x]; pseudo-query [y] scores above zero
  CHECK(pools.at("d2").entries[0].score > 0.0);
  CHECK_THROWS_AS(rank_all_pools(c, store, golds, false, 2), config_error);
}
