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

#include <nlohmann/json.hpp>

#include "capstone/index.hpp"

namespace capstone {

using RankedLists = std::map<std::string, std::vector<ScoredDoc>>;

inline RankedLists ranked_lists(const Run& run) {
  RankedLists lists;
  for (const auto& [qid, result] : run) lists[qid] = result.hits;
  return lists;
}

namespace metrics {

/// 1/rank of the first relevant document within the top k, else 0.
inline double reciprocal_rank(const std::vector<ScoredDoc>& hits,
                              const std::set<std::string>& relevant,
                              std::size_t k) {
  const std::size_t depth = std::min(k, hits.size());
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.count(hits[i].doc_id))
      return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

inline double recall(const std::vector<ScoredDoc>& hits,
                     const std::set<std::string>& relevant, std::size_t k) {
  const std::size_t depth = std::min(k, hits.size());
  std::size_t found = 0;
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.count(hits[i].doc_id)) ++found;
  return static_cast<double>(found) / static_cast<double>(relevant.size());
}

inline double dcg(const std::vector<ScoredDoc>& hits,
                  const std::set<std::string>& relevant, std::size_t k) {
  const std::size_t depth = std::min(k, hits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < depth; ++i)
    if (relevant.count(hits[i].doc_id))
      s += 1.0 / std::log2(static_cast<double>(i + 2));
  return s;
}

/// Ideal DCG at k for binary judgments: all relevants stacked from rank 1.
inline double ideal_dcg(std::size_t n_relevant, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(n_relevant, k); ++i)
    s += 1.0 / std::log2(static_cast<double>(i + 2));
  return s;
}

}  // namespace metrics

inline double mrr_at_k(const RankedLists& run, const QRels& qrels,
                       std::size_t k) {
  if (run.empty()) throw validation_error("mrr_at_k: empty run");
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& [qid, hits] : run) {
    const auto& rel = qrels.relevant(qid);
    if (rel.empty()) continue;
    sum += metrics::reciprocal_rank(hits, rel, k);
    ++used;
  }
  if (used == 0) throw validation_error("mrr_at_k: no judged queries");
  return sum / static_cast<double>(used);
}

inline double recall_at_k(const RankedLists& run, const QRels& qrels,
                          std::size_t k) {
  if (run.empty()) throw validation_error("recall_at_k: empty run");
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& [qid, hits] : run) {
    const auto& rel = qrels.relevant(qid);
    if (rel.empty()) continue;
    sum += metrics::recall(hits, rel, k);
    ++used;
  }
  if (used == 0) throw validation_error("recall_at_k: no judged queries");
  return sum / static_cast<double>(used);
}

/// Binary-gain nDCG with the log2 discount; queries whose ideal DCG is zero
/// are skipped (and counted by evaluate_run).
inline double ndcg_at_k(const RankedLists& run, const QRels& qrels,
                        std::size_t k, std::size_t* skipped = nullptr) {
  if (run.empty()) throw validation_error("ndcg_at_k: empty run");
  double sum = 0.0;
  std::size_t used = 0, skip = 0;
  for (const auto& [qid, hits] : run) {
    const auto& rel = qrels.relevant(qid);
    const double ideal = metrics::ideal_dcg(rel.size(), k);
    if (ideal <= 0.0) {
      ++skip;
      continue;
    }
    sum += metrics::dcg(hits, rel, k) / ideal;
    ++used;
  }
  if (skipped) *skipped = skip;
  if (used == 0) throw validation_error("ndcg_at_k: no scorable queries");
  return sum / static_cast<double>(used);
}

struct MetricSpec {
  enum class Kind { mrr, recall, ndcg } kind;
  std::size_t k;

  std::string name() const {
    switch (kind) {
      case Kind::mrr: return "mrr@" + std::to_string(k);
      case Kind::recall: return "recall@" + std::to_string(k);
      case Kind::ndcg: return "ndcg@" + std::to_string(k);
    }
    return "";
  }

  static MetricSpec parse(std::string_view s) {
    auto at = s.find('@');
    if (at == std::string_view::npos)
      throw config_error("metric must look like mrr@10: " + std::string(s));
    std::string_view head = s.substr(0, at), tail = s.substr(at + 1);
    std::size_t k = 0;
    for (char c : tail) {
      if (c < '0' || c > '9')
        throw config_error("bad metric cutoff: " + std::string(s));
      k = k * 10 + static_cast<std::size_t>(c - '0');
    }
    if (k == 0) throw config_error("metric cutoff must be >= 1");
    if (head == "mrr") return {Kind::mrr, k};
    if (head == "recall") return {Kind::recall, k};
    if (head == "ndcg") return {Kind::ndcg, k};
    throw config_error("unknown metric: " + std::string(s));
  }
};

struct ReportMeta {
  std::string strategy = "-";
  std::string mode = "-";
  std::size_t s = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
};

struct MetricReport {
  ReportMeta meta;
  std::map<std::string, double> aggregates;                      // metric -> mean
  std::map<std::string, std::map<std::string, double>> per_query;  // metric -> qid -> value
  std::size_t skipped_queries = 0;
};

/// Per-query metric values plus arithmetic means. Every run query must be
/// judged; nDCG queries with zero ideal DCG are skipped and counted.
inline MetricReport evaluate_run(const RankedLists& run, const QRels& qrels,
                                 const std::vector<MetricSpec>& specs,
                                 const ReportMeta& meta = {}) {
  if (run.empty()) throw validation_error("evaluate_run: empty run");
  if (specs.empty()) throw config_error("evaluate_run: no metrics requested");
  MetricReport report;
  report.meta = meta;
  for (const auto& [qid, hits] : run)
    if (qrels.relevant(qid).empty()) ++report.skipped_queries;
  for (const MetricSpec& spec : specs) {
    auto& col = report.per_query[spec.name()];
    double sum = 0.0;
    std::size_t used = 0;
    for (const auto& [qid, hits] : run) {
      const auto& rel = qrels.relevant(qid);
      if (rel.empty()) continue;
      double value = 0.0;
      bool usable = true;
      switch (spec.kind) {
        case MetricSpec::Kind::mrr:
          value = metrics::reciprocal_rank(hits, rel, spec.k);
          break;
        case MetricSpec::Kind::recall:
          value = metrics::recall(hits, rel, spec.k);
          break;
        case MetricSpec::Kind::ndcg: {
          const double ideal = metrics::ideal_dcg(rel.size(), spec.k);
          if (ideal <= 0.0) {
            usable = false;
            ++report.skipped_queries;
          } else {
            value = metrics::dcg(hits, rel, spec.k) / ideal;
          }
          break;
        }
      }
      if (!usable) continue;
      col[qid] = value;
      sum += value;
      ++used;
    }
    if (used == 0)
      throw validation_error("evaluate_run: no scorable queries for " +
                             spec.name());
    report.aggregates[spec.name()] = sum / static_cast<double>(used);
  }
  return report;
}

/// CSV rows "strategy,mode,S,K,seed,metric,value" for every aggregate.
inline std::string report_csv_rows(const MetricReport& report) {
  std::string out;
  for (const auto& [metric, value] : report.aggregates) {
    out += report.meta.strategy + "," + report.meta.mode + "," +
           std::to_string(report.meta.s) + "," + std::to_string(report.meta.k) +
           "," + std::to_string(report.meta.seed) + "," + metric + "," +
           format_double(value) + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const MetricReport& report,
                                  std::uint64_t config_hash = 0) {
  nlohmann::json j;
  j["metadata"] = {{"strategy", report.meta.strategy},
                   {"mode", report.meta.mode},
                   {"S", report.meta.s},
                   {"K", report.meta.k},
                   {"seed", report.meta.seed},
                   {"skipped_queries", report.skipped_queries},
                   {"config_hash", config_hash}};
  // Conventions that affect comparability across toolkits.
  j["metadata"]["notes"] = {
      {"rouge_l", "sentence-level F1 on surface tokens, no stemming"},
      {"corpus_expansion_dedup", "each document scored by its best view"}};
  j["aggregates"] = report.aggregates;
  j["per_query"] = report.per_query;
  return j;
}

}  // namespace capstone
