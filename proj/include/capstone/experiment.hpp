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

#include <iostream>

#include "capstone/eval.hpp"
#include "capstone/trainer.hpp"

namespace capstone {

/// Defines the strategy/S/mode/seed sweep that reproduces the ablation
/// figures at desk scale.
struct ExperimentConfig {
  SynthConfig dataset;
  std::size_t n_train_queries = 50;
  std::size_t n_eval_queries = 20;
  std::size_t dim = 24;
  StageConfig stage;  // strategy and seed are overwritten per cell
  std::size_t neg_depth = 30;
  std::size_t neg_count = 20;
  std::vector<std::string> strategies = {"none", "gold", "curriculum"};
  std::vector<std::size_t> s_values = {1, 5};
  std::vector<std::string> modes = {"no_expansion", "corpus_expansion",
                                    "typical"};
  std::vector<std::string> poolings = {"average"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<std::string> metrics = {"mrr@10"};

  void validate() const {
    if (strategies.empty() || s_values.empty() || modes.empty() ||
        poolings.empty() || seeds.empty() || metrics.empty())
      throw config_error("experiment: every sweep list must be non-empty");
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size())
      throw config_error("experiment: seeds must be distinct");
    if (n_train_queries + n_eval_queries != dataset.n_queries)
      throw config_error(
          "experiment: n_train_queries + n_eval_queries must equal "
          "dataset.n_queries");
    for (const auto& s : strategies) SelectionStrategy::parse(s);
    for (const auto& m : modes) index_mode_from_string(m);
    for (const auto& p : poolings) pooling_from_string(p);
    for (const auto& m : metrics) MetricSpec::parse(m);
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"vocab_size", c.vocab_size},
       {"n_docs", c.n_docs},
       {"doc_len", c.doc_len},
       {"n_queries", c.n_queries},
       {"queries_per_doc", c.queries_per_doc},
       {"fidelities", c.fidelities},
       {"salient_per_doc", c.salient_per_doc},
       {"salient_mass", c.salient_mass},
       {"gold_query_len", c.gold_query_len}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.n_docs = j.value("n_docs", c.n_docs);
  c.doc_len = j.value("doc_len", c.doc_len);
  c.n_queries = j.value("n_queries", c.n_queries);
  c.queries_per_doc = j.value("queries_per_doc", c.queries_per_doc);
  c.fidelities = j.value("fidelities", c.fidelities);
  c.salient_per_doc = j.value("salient_per_doc", c.salient_per_doc);
  c.salient_mass = j.value("salient_mass", c.salient_mass);
  c.gold_query_len = j.value("gold_query_len", c.gold_query_len);
}

inline void to_json(nlohmann::json& j, const StageConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"hard_negs_per_query", c.hard_negs_per_query},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"K", c.k}};
}

inline void from_json(const nlohmann::json& j, StageConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.hard_negs_per_query = j.value("hard_negs_per_query", c.hard_negs_per_query);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.k = j.value("K", c.k);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"dataset", c.dataset},
       {"n_train_queries", c.n_train_queries},
       {"n_eval_queries", c.n_eval_queries},
       {"dim", c.dim},
       {"stage", c.stage},
       {"neg_depth", c.neg_depth},
       {"neg_count", c.neg_count},
       {"strategies", c.strategies},
       {"s_values", c.s_values},
       {"modes", c.modes},
       {"poolings", c.poolings},
       {"seeds", c.seeds},
       {"metrics", c.metrics}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("dataset")) j.at("dataset").get_to(c.dataset);
  c.n_train_queries = j.value("n_train_queries", c.n_train_queries);
  c.n_eval_queries = j.value("n_eval_queries", c.n_eval_queries);
  c.dim = j.value("dim", c.dim);
  if (j.contains("stage")) j.at("stage").get_to(c.stage);
  c.neg_depth = j.value("neg_depth", c.neg_depth);
  c.neg_count = j.value("neg_count", c.neg_count);
  c.strategies = j.value("strategies", c.strategies);
  c.s_values = j.value("s_values", c.s_values);
  c.modes = j.value("modes", c.modes);
  c.poolings = j.value("poolings", c.poolings);
  c.seeds = j.value("seeds", c.seeds);
  c.metrics = j.value("metrics", c.metrics);
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  nlohmann::json j = cfg;
  return fnv1a64(j.dump());
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

struct CellRow {
  std::string strategy;
  std::string mode;  // label, pooling folded in for typical
  std::size_t s = 0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  std::string error;  // non-empty when the cell failed
};

struct ExperimentResult {
  std::uint64_t hash = 0;
  std::vector<CellRow> rows;
  // summary key: strategy, mode label, S, metric -> mean over seeds
  std::vector<CellRow> summary;
};

inline std::string mode_label(IndexMode mode, Pooling pooling) {
  if (mode == IndexMode::typical && pooling != Pooling::average)
    return "typical_" + to_string(pooling);
  return to_string(mode);
}

/// Mean over seeds for one summary cell; NaN cells poison the mean.
inline double summary_mean(const std::vector<CellRow>& rows,
                           const std::string& strategy, const std::string& mode,
                           std::size_t s, const std::string& metric) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const CellRow& r : rows) {
    if (r.strategy != strategy || r.mode != mode || r.s != s ||
        r.metric != metric)
      continue;
    sum += r.value;
    ++n;
  }
  if (n == 0) throw validation_error("summary_mean: no matching cells");
  return sum / static_cast<double>(n);
}

/// Full cross-product sweep. One model per (strategy, seed); indexing modes
/// share checkpoints through the on-disk cache under out_dir/cache.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir,
                                       std::size_t threads = 1,
                                       std::ostream* progress = nullptr) {
  cfg.validate();
  ExperimentResult result;
  result.hash = config_hash(cfg);
  const std::string hh = hash_hex(result.hash);
  const auto cache_dir = out_dir / "cache";
  std::filesystem::create_directories(cache_dir);

  std::vector<MetricSpec> specs;
  std::size_t search_depth = 1;
  for (const auto& m : cfg.metrics) {
    specs.push_back(MetricSpec::parse(m));
    search_depth = std::max(search_depth, specs.back().k);
  }

  for (std::uint64_t seed : cfg.seeds) {
    SynthDataset ds = synthesize_dataset(cfg.dataset, seed);
    std::vector<Query> train_queries(ds.queries.begin(),
                                     ds.queries.begin() +
                                         static_cast<long>(cfg.n_train_queries));
    std::vector<Query> eval_queries(ds.queries.begin() +
                                        static_cast<long>(cfg.n_train_queries),
                                    ds.queries.end());
    TokenVocab vocab = TokenVocab::build(ds.corpus, &ds.store);

    std::map<std::string, Query> golds;
    for (const Query& q : ds.queries)
      for (const auto& d : ds.qrels.relevant(q.id)) golds.emplace(d, q);
    PoolMap pools = rank_all_pools(ds.corpus, ds.store, golds, true,
                                   cfg.dataset.gold_query_len);

    Bm25Scorer scorer(ds.corpus);
    TrainData data;
    data.corpus = &ds.corpus;
    data.vocab = &vocab;
    data.queries = &train_queries;
    data.qrels = &ds.qrels;
    data.negative_pools = bm25_negative_pools(scorer, train_queries, ds.qrels,
                                              cfg.neg_depth, cfg.neg_count);

    for (const std::string& strategy_name : cfg.strategies) {
      SelectionStrategy strategy = SelectionStrategy::parse(strategy_name);
      const auto ckpt = cache_dir / ("model_" + strategy.to_string() +
                                     "_seed" + std::to_string(seed) + "_" + hh +
                                     ".bin");
      EncoderModel model;
      if (std::filesystem::exists(ckpt)) {
        model = load_model(ckpt);
      } else {
        StageConfig stage = cfg.stage;
        stage.strategy = strategy;
        stage.seed = derive_seed(seed, "train:" + strategy.to_string());
        EncoderModel init =
            init_model(vocab.size(), cfg.dim, derive_seed(stage.seed, "init"));
        auto [trained, log] = train(stage, data, &pools, std::move(init));
        model = std::move(trained);
        save_model(model, ckpt, result.hash);
        save_training_log(log,
                          cache_dir / ("trainlog_" + strategy.to_string() +
                                       "_seed" + std::to_string(seed) + "_" +
                                       hh + ".jsonl"),
                          result.hash);
      }

      // Index memo: identical cells across the S sweep share vectors.
      std::map<std::string, RetrievalIndex> index_memo;
      for (IndexMode mode :
           {IndexMode::no_expansion, IndexMode::corpus_expansion,
            IndexMode::typical, IndexMode::document_expansion,
            IndexMode::asymmetric}) {
        if (std::find(cfg.modes.begin(), cfg.modes.end(), to_string(mode)) ==
            cfg.modes.end())
          continue;
        for (std::size_t s : cfg.s_values) {
          std::vector<Pooling> pools_to_run = {Pooling::average};
          if (mode == IndexMode::typical) {
            pools_to_run.clear();
            for (const auto& p : cfg.poolings)
              pools_to_run.push_back(pooling_from_string(p));
          }
          for (Pooling pooling : pools_to_run) {
            const std::string label = mode_label(mode, pooling);
            try {
              const std::size_t eff_s =
                  mode == IndexMode::no_expansion ? 1 : s;
              const std::string memo_key =
                  to_string(mode) + "/" + std::to_string(eff_s) + "/" +
                  to_string(pooling);
              auto memo_it = index_memo.find(memo_key);
              if (memo_it == index_memo.end()) {
                memo_it =
                    index_memo
                        .emplace(memo_key,
                                 build_index(model, vocab, ds.corpus, &ds.store,
                                             mode, eff_s, pooling, {}, threads))
                        .first;
              }
              const RetrievalIndex& index = memo_it->second;
              RankedLists lists;
              for (const Query& q : eval_queries) {
                SearchResult res =
                    search(index, encode_query(model, vocab, q), search_depth);
                lists[q.id] = res.hits;
              }
              ReportMeta meta{strategy.to_string(), label, s, cfg.stage.k,
                              seed};
              MetricReport report = evaluate_run(lists, ds.qrels, specs, meta);
              for (const auto& [metric, value] : report.aggregates)
                result.rows.push_back({strategy.to_string(), label, s,
                                       cfg.stage.k, seed, metric, value, ""});
            } catch (const std::exception& e) {
              for (const MetricSpec& spec : specs)
                result.rows.push_back(
                    {strategy.to_string(), label, s, cfg.stage.k, seed,
                     spec.name(), std::numeric_limits<double>::quiet_NaN(),
                     e.what()});
              if (progress)
                *progress << "cell failed: " << strategy.to_string() << "/"
                          << label << "/S=" << s << " seed " << seed << ": "
                          << e.what() << "\n";
            }
          }
        }
      }
      if (progress)
        *progress << "seed " << seed << " strategy " << strategy.to_string()
                  << " done\n";
    }
  }

  // Per-cell means over seeds, in sweep order.
  for (const std::string& strategy_name : cfg.strategies) {
    SelectionStrategy strategy = SelectionStrategy::parse(strategy_name);
    for (const std::string& mode_name : cfg.modes) {
      IndexMode mode = index_mode_from_string(mode_name);
      for (std::size_t s : cfg.s_values) {
        std::vector<Pooling> pools_to_run = {Pooling::average};
        if (mode == IndexMode::typical) {
          pools_to_run.clear();
          for (const auto& p : cfg.poolings)
            pools_to_run.push_back(pooling_from_string(p));
        }
        for (Pooling pooling : pools_to_run) {
          const std::string label = mode_label(mode, pooling);
          for (const MetricSpec& spec : specs) {
            CellRow row;
            row.strategy = strategy.to_string();
            row.mode = label;
            row.s = s;
            row.k = cfg.stage.k;
            row.seed = 0;  // aggregate row
            row.metric = spec.name();
            row.value = summary_mean(result.rows, row.strategy, label, s,
                                     spec.name());
            result.summary.push_back(row);
          }
        }
      }
    }
  }
  return result;
}

inline void save_cells_csv(const std::vector<CellRow>& rows,
                           const std::filesystem::path& path,
                           std::uint64_t hash, bool with_seed) {
  std::string out = "# config_hash=" + hash_hex(hash) + "\n";
  out += with_seed ? "strategy,mode,S,K,seed,metric,value\n"
                   : "strategy,mode,S,K,metric,value\n";
  for (const CellRow& r : rows) {
    out += r.strategy + "," + r.mode + "," + std::to_string(r.s) + "," +
           std::to_string(r.k) + ",";
    if (with_seed) out += std::to_string(r.seed) + ",";
    out += r.metric + "," + format_double(r.value) + "\n";
  }
  write_file(path, out);
}

}  // namespace capstone
