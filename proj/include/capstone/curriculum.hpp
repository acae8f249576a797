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

#include <optional>

#include "capstone/common.hpp"
#include "capstone/corpus.hpp"
#include "capstone/textmetrics.hpp"

namespace capstone {

struct PoolEntry {
  Tokens query;
  double score;              // ROUGE-L to the gold query
  std::size_t source_index;  // position in generation order
};

/// A document's pseudo-queries sorted ascending by relevance to its gold
/// query. Ties keep generation order (stable sort).
struct RankedQueryPool {
  std::string doc_id;
  std::string gold_query_id;
  std::vector<PoolEntry> entries;
};

using PoolMap = std::map<std::string, RankedQueryPool>;

struct GroupPartition {
  std::size_t k = 0;  // effective group count (clamped to pool size)
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [begin, end)
  bool clamped = false;
};

enum class StrategyKind { none, gold, random_pick, top_k, bottom_k, curriculum };

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::none;
  std::size_t k = 1;  // for top_k / bottom_k

  bool needs_pool() const {
    return kind != StrategyKind::none && kind != StrategyKind::gold;
  }

  std::string to_string() const {
    switch (kind) {
      case StrategyKind::none: return "none";
      case StrategyKind::gold: return "gold";
      case StrategyKind::random_pick: return "random";
      case StrategyKind::top_k: return "top_" + std::to_string(k);
      case StrategyKind::bottom_k: return "bottom_" + std::to_string(k);
      case StrategyKind::curriculum: return "curriculum";
    }
    return "none";
  }

  static SelectionStrategy parse(std::string_view s) {
    auto with_k = [&](std::string_view prefix,
                      StrategyKind kind) -> std::optional<SelectionStrategy> {
      if (s.substr(0, prefix.size()) != prefix) return std::nullopt;
      std::string_view rest = s.substr(prefix.size());
      std::size_t k = 1;
      if (!rest.empty()) {
        if (rest.front() == '_' || rest.front() == ':') rest.remove_prefix(1);
        if (rest == "k") {
          k = 1;
        } else {
          k = 0;
          for (char c : rest) {
            if (c < '0' || c > '9') return std::nullopt;
            k = k * 10 + static_cast<std::size_t>(c - '0');
          }
        }
      }
      if (k == 0) return std::nullopt;
      return SelectionStrategy{kind, k};
    };
    if (s == "none") return {StrategyKind::none, 1};
    if (s == "gold") return {StrategyKind::gold, 1};
    if (s == "random") return {StrategyKind::random_pick, 1};
    if (s == "curriculum") return {StrategyKind::curriculum, 1};
    if (auto t = with_k("top", StrategyKind::top_k)) return *t;
    if (auto t = with_k("bottom", StrategyKind::bottom_k)) return *t;
    throw config_error("unknown selection strategy: " + std::string(s));
  }
};

/// Sorts a document's generated queries ascending by ROUGE-L to the gold
/// query, preserving generation order among ties.
inline RankedQueryPool rank_query_pool(const Query& gold,
                                       const std::vector<Tokens>& generated,
                                       std::string doc_id = {}) {
  if (generated.empty())
    throw config_error("rank_query_pool: no generated queries" +
                       (doc_id.empty() ? "" : " for document " + doc_id));
  RankedQueryPool pool;
  pool.doc_id = std::move(doc_id);
  pool.gold_query_id = gold.id;
  pool.entries.reserve(generated.size());
  for (std::size_t i = 0; i < generated.size(); ++i)
    pool.entries.push_back({generated[i], rouge_l(generated[i], gold.tokens), i});
  std::stable_sort(pool.entries.begin(), pool.entries.end(),
                   [](const PoolEntry& a, const PoolEntry& b) {
                     return a.score < b.score;
                   });
  return pool;
}

/// K contiguous groups with sizes as equal as possible; the first
/// (len mod K) groups take one extra element. K larger than the pool is
/// clamped.
inline GroupPartition partition_groups(const RankedQueryPool& pool,
                                       std::size_t k) {
  if (k == 0) throw config_error("partition_groups: K must be >= 1");
  const std::size_t len = pool.entries.size();
  if (len == 0) throw config_error("partition_groups: empty pool");
  GroupPartition part;
  part.clamped = k > len;
  part.k = part.clamped ? len : k;
  const std::size_t base = len / part.k;
  const std::size_t rem = len % part.k;
  std::size_t begin = 0;
  for (std::size_t g = 0; g < part.k; ++g) {
    std::size_t size = base + (g < rem ? 1 : 0);
    part.ranges.emplace_back(begin, begin + size);
    begin += size;
  }
  return part;
}

/// Maps an optimizer step to one of K contiguous equal phases:
/// floor(step * K / total_steps).
inline std::size_t phase_of_step(std::size_t step, std::size_t total_steps,
                                 std::size_t k) {
  if (k == 0) throw config_error("phase_of_step: K must be >= 1");
  if (total_steps < k)
    throw config_error("phase_of_step: total_steps must be >= K");
  if (step >= total_steps)
    throw config_error("phase_of_step: step out of range");
  return (step * k) / total_steps;
}

struct StepContext {
  std::size_t step = 0;
  std::size_t total_steps = 1;
  std::size_t k = 1;  // curriculum group count
};

struct Selection {
  Tokens tokens;
  std::size_t pool_index = kNoIndex;  // index into the ranked pool
  double score = 1.0;                 // ROUGE-L of the expansion to the gold
  std::size_t group = kNoIndex;       // curriculum group, when applicable
};

/// Picks the expansion query for one document under a strategy. Returns
/// nullopt for `none`. `pool` may be null only for none/gold.
inline std::optional<Selection> select_expansion_query(
    const SelectionStrategy& strategy, const RankedQueryPool* pool,
    const Query& gold, const StepContext& ctx, Rng& rng) {
  if (strategy.kind == StrategyKind::none) return std::nullopt;
  if (strategy.kind == StrategyKind::gold)
    return Selection{gold.tokens, kNoIndex, 1.0, kNoIndex};
  if (pool == nullptr || pool->entries.empty())
    throw config_error("strategy " + strategy.to_string() +
                       " requires a ranked query pool");
  const std::size_t len = pool->entries.size();
  std::size_t idx = 0;
  std::size_t group = kNoIndex;
  switch (strategy.kind) {
    case StrategyKind::random_pick:
      idx = uniform_index(rng, len);
      break;
    case StrategyKind::top_k: {
      const std::size_t kk = std::min(strategy.k, len);
      idx = len - kk + uniform_index(rng, kk);
      break;
    }
    case StrategyKind::bottom_k: {
      const std::size_t kk = std::min(strategy.k, len);
      idx = uniform_index(rng, kk);
      break;
    }
    case StrategyKind::curriculum: {
      GroupPartition part = partition_groups(*pool, ctx.k);
      group = phase_of_step(ctx.step, ctx.total_steps, part.k);
      auto [begin, end] = part.ranges[group];
      idx = begin + uniform_index(rng, end - begin);
      break;
    }
    default:
      throw config_error("unhandled strategy");
  }
  const PoolEntry& e = pool->entries[idx];
  return Selection{e.query, idx, e.score, group};
}

// ---------------------------------------------------------------------------
// Pool cache: TSV docid\trank\tscore\tquery, one line per entry, lines
// grouped by document in rank order. Lines starting with '#' are skipped.
// ---------------------------------------------------------------------------

inline void save_pools(const PoolMap& pools, const std::filesystem::path& path,
                       const std::string& header_comment = {}) {
  std::string out;
  if (!header_comment.empty()) out += "# " + header_comment + "\n";
  for (const auto& [docid, pool] : pools) {
    for (std::size_t r = 0; r < pool.entries.size(); ++r) {
      const PoolEntry& e = pool.entries[r];
      out += docid + "\t" + std::to_string(r) + "\t" + format_double(e.score) +
             "\t" + join_tokens(e.query) + "\n";
    }
  }
  write_file(path, out);
}

inline PoolMap load_pools(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  PoolMap pools;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
      auto tab = line.find('\t', start);
      if (tab == std::string::npos)
        throw parse_error(path.string() + ":" + std::to_string(lineno) +
                          ": expected 4 tab-separated columns");
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    cols.push_back(line.substr(start));
    RankedQueryPool& pool = pools[cols[0]];
    pool.doc_id = cols[0];
    PoolEntry e;
    e.source_index = pool.entries.size();
    try {
      e.score = std::stod(cols[2]);
    } catch (const std::exception&) {
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": bad score " + cols[2]);
    }
    e.query = tokenize(cols[3], kMaxQueryLen);
    if (e.query.empty())
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": empty query text");
    const std::size_t rank = e.source_index;
    if (cols[1] != std::to_string(rank))
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": rank out of order, expected " + std::to_string(rank));
    if (rank > 0 && pool.entries.back().score > e.score)
      throw validation_error(path.string() + ":" + std::to_string(lineno) +
                             ": scores not ascending for " + cols[0]);
    pool.entries.push_back(std::move(e));
  }
  if (pools.empty()) throw validation_error(path.string() + ": no pools");
  return pools;
}

/// Ranks every document's pool. Documents missing from `golds` fall back to
/// their top-frequency tokens when `salient_fallback` is set, otherwise they
/// are an error.
inline PoolMap rank_all_pools(const Corpus& corpus,
                              const GeneratedQueryStore& store,
                              const std::map<std::string, Query>& golds,
                              bool salient_fallback = true,
                              std::size_t gold_len = 5) {
  PoolMap pools;
  for (const auto& doc : corpus.documents()) {
    if (!store.has(doc.id)) continue;
    auto it = golds.find(doc.id);
    Query gold;
    if (it != golds.end()) {
      gold = it->second;
    } else if (salient_fallback) {
      gold = Query{"synthetic:" + doc.id, gold_query_tokens(doc, gold_len)};
    } else {
      throw config_error("no gold query for document " + doc.id);
    }
    pools.emplace(doc.id, rank_query_pool(gold, store.of(doc.id), doc.id));
  }
  if (pools.empty()) throw config_error("rank_all_pools: no documents ranked");
  return pools;
}

}  // namespace capstone
