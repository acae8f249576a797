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

#include <nlohmann/json.hpp>

#include "capstone/curriculum.hpp"
#include "capstone/index.hpp"

namespace capstone {

enum class NegativeSource { bm25, mined };

inline std::string to_string(NegativeSource s) {
  return s == NegativeSource::bm25 ? "bm25" : "mined";
}

struct StageConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 8;
  std::size_t hard_negs_per_query = 7;
  double lr = 0.1;
  double weight_decay = 0.01;
  std::size_t k = 3;  // curriculum group count (stage two defaults to 4)
  SelectionStrategy strategy;
  std::uint64_t seed = 1;
  NegativeSource negative_source = NegativeSource::bm25;

  void validate() const {
    if (batch_size == 0) throw config_error("batch_size must be >= 1");
    if (k == 0) throw config_error("K must be >= 1");
    if (steps > 0 && steps < k)
      throw config_error("steps must be >= K");
    if (!(lr > 0.0)) throw config_error("lr must be positive");
  }
};

/// Per-parameter first/second moment estimates plus the step counter.
struct OptimizerState {
  Gradients m, v;
  std::size_t step = 0;

  static OptimizerState for_model(const EncoderModel& model) {
    return {Gradients::zeros_like(model), Gradients::zeros_like(model), 0};
  }
};

/// One AdamW update with bias correction and decoupled weight decay.
inline void adam_step(EncoderModel& model, const Gradients& grads,
                      OptimizerState& state, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8,
                      double weight_decay = 0.01) {
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(beta1, t);
  const double bc2 = 1.0 - std::pow(beta2, t);
  const Mat* gs[4] = {&grads.query_embeddings, &grads.doc_embeddings,
                      &grads.query_proj, &grads.doc_proj};
  Mat* ps[4] = {&model.query_embeddings, &model.doc_embeddings,
                &model.query_proj, &model.doc_proj};
  Mat* ms[4] = {&state.m.query_embeddings, &state.m.doc_embeddings,
                &state.m.query_proj, &state.m.doc_proj};
  Mat* vs[4] = {&state.v.query_embeddings, &state.v.doc_embeddings,
                &state.v.query_proj, &state.v.doc_proj};
  static const char* names[4] = {"query_embeddings", "doc_embeddings",
                                 "query_proj", "doc_proj"};
  for (int k = 0; k < 4; ++k) {
    if (gs[k]->a.size() != ps[k]->a.size())
      throw validation_error("adam_step: gradient shape mismatch for " +
                             std::string(names[k]));
    for (std::size_t i = 0; i < ps[k]->a.size(); ++i) {
      const double g = gs[k]->a[i];
      if (!std::isfinite(g))
        throw validation_error("adam_step: non-finite gradient in " +
                               std::string(names[k]) + " at " +
                               std::to_string(i));
      double& m = ms[k]->a[i];
      double& v = vs[k]->a[i];
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      double& p = ps[k]->a[i];
      p -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p);
    }
  }
}

/// Linear schedule: warmup over the first ceil(steps/10) steps from lr/W up
/// to lr, then linear decay reaching 0 at the final step.
inline double scheduled_lr(std::size_t step, std::size_t total_steps,
                           double peak_lr) {
  if (total_steps == 0) throw config_error("scheduled_lr: no steps");
  if (step >= total_steps) throw config_error("scheduled_lr: step out of range");
  const std::size_t warmup = (total_steps + 9) / 10;
  if (step < warmup)
    return peak_lr * static_cast<double>(step + 1) /
           static_cast<double>(warmup);
  if (total_steps == warmup) return peak_lr;
  return peak_lr * static_cast<double>(total_steps - 1 - step) /
         static_cast<double>(total_steps - warmup);
}

/// One sampled training example before expansion.
struct RowSample {
  const Query* query = nullptr;
  const Document* positive = nullptr;
  std::vector<const Document*> negatives;
};

/// Expands a set of sampled rows into a training batch. Gold expands every
/// row document with the row's query; pool-backed strategies expand each
/// document with a query drawn from its own ranked pool.
inline TrainingBatch build_batch(const std::vector<RowSample>& rows,
                                 const SelectionStrategy& strategy,
                                 const StepContext& ctx, const PoolMap* pools,
                                 Rng& rng) {
  if (rows.empty()) throw config_error("build_batch: no rows");
  TrainingBatch batch;
  batch.rows.reserve(rows.size());
  for (const RowSample& row : rows) {
    if (row.query == nullptr || row.positive == nullptr)
      throw config_error("build_batch: incomplete row");
    for (const Document* neg : row.negatives)
      if (neg->id == row.positive->id)
        throw validation_error("build_batch: positive " + neg->id +
                               " sampled as its own negative");
    BatchRow out;
    out.query = *row.query;
    auto expand = [&](const Document& doc) {
      ExpandedDoc ed;
      ed.doc_id = doc.id;
      ed.tokens = doc.tokens;
      if (strategy.kind == StrategyKind::none) return ed;
      const RankedQueryPool* pool = nullptr;
      if (strategy.needs_pool()) {
        if (pools == nullptr)
          throw config_error("strategy " + strategy.to_string() +
                             " requires ranked pools");
        auto it = pools->find(doc.id);
        if (it == pools->end())
          throw config_error("no ranked pool for document " + doc.id);
        pool = &it->second;
      }
      auto sel = select_expansion_query(strategy, pool, *row.query, ctx, rng);
      if (sel) {
        ed.expansions.push_back(sel->tokens);
        ed.pool_index = sel->pool_index;
        ed.expansion_score = sel->score;
        ed.group = sel->group;
      }
      return ed;
    };
    out.positive = expand(*row.positive);
    out.hard_negatives.reserve(row.negatives.size());
    for (const Document* neg : row.negatives)
      out.hard_negatives.push_back(expand(*neg));
    batch.rows.push_back(std::move(out));
  }
  return batch;
}

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::size_t phase = 0;
  double mean_expansion_rouge = 0.0;
  std::size_t n_expanded = 0;
  std::size_t group_violations = 0;
};

struct TrainingLog {
  std::string strategy;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::string negative_source;
  std::size_t steps = 0;
  std::vector<StepLog> entries;

  std::size_t total_violations() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.group_violations;
    return n;
  }
};

inline void save_training_log(const TrainingLog& log,
                              const std::filesystem::path& path,
                              std::uint64_t config_hash = 0) {
  std::string out;
  nlohmann::json meta{{"meta",
                       {{"strategy", log.strategy},
                        {"K", log.k},
                        {"seed", log.seed},
                        {"negative_source", log.negative_source},
                        {"steps", log.steps},
                        {"config_hash", config_hash}}}};
  out += meta.dump();
  out += '\n';
  for (const auto& e : log.entries) {
    nlohmann::json rec{{"step", e.step},
                       {"loss", e.loss},
                       {"lr", e.lr},
                       {"phase", e.phase},
                       {"mean_expansion_rouge", e.mean_expansion_rouge},
                       {"n_expanded", e.n_expanded},
                       {"group_violations", e.group_violations}};
    out += rec.dump();
    out += '\n';
  }
  write_file(path, out);
}

/// Everything a training stage needs: documents, queries, judgments, ranked
/// pools and per-query hard-negative candidate lists.
struct TrainData {
  const Corpus* corpus = nullptr;
  const TokenVocab* vocab = nullptr;
  const std::vector<Query>* queries = nullptr;
  const QRels* qrels = nullptr;
  std::map<std::string, std::vector<std::string>> negative_pools;
};

/// Runs `cfg.steps` AdamW steps over batches sampled from `data`. Pure given
/// the seed. steps == 0 is the degenerate pass-through. Aborts when the loss
/// stops being finite.
inline std::pair<EncoderModel, TrainingLog> train(const StageConfig& cfg,
                                                  const TrainData& data,
                                                  const PoolMap* pools,
                                                  EncoderModel init,
                                                  const EncodeLimits& lim = {}) {
  cfg.validate();
  if (data.corpus == nullptr || data.vocab == nullptr ||
      data.queries == nullptr || data.qrels == nullptr)
    throw config_error("train: incomplete data");
  if (data.queries->empty()) throw config_error("train: no training queries");
  if (cfg.strategy.needs_pool() && pools == nullptr)
    throw config_error("train: strategy " + cfg.strategy.to_string() +
                       " requires pools");

  TrainingLog log;
  log.strategy = cfg.strategy.to_string();
  log.k = cfg.k;
  log.seed = cfg.seed;
  log.negative_source = to_string(cfg.negative_source);
  log.steps = cfg.steps;
  if (cfg.steps == 0) return {std::move(init), std::move(log)};

  EncoderModel model = std::move(init);
  OptimizerState opt = OptimizerState::for_model(model);
  Rng rng(derive_seed(cfg.seed, "train"));
  const std::size_t n_queries = data.queries->size();
  const std::size_t rows_per_batch = std::min(cfg.batch_size, n_queries);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    StepContext ctx{step, cfg.steps, cfg.k};
    std::vector<RowSample> rows;
    rows.reserve(rows_per_batch);
    for (std::size_t qi : sample_distinct(rng, n_queries, rows_per_batch)) {
      RowSample row;
      row.query = &(*data.queries)[qi];
      const auto& rel = data.qrels->relevant(row.query->id);
      std::size_t pick = rel.size() == 1 ? 0 : uniform_index(rng, rel.size());
      auto rel_it = rel.begin();
      std::advance(rel_it, pick);
      row.positive = &data.corpus->by_id(*rel_it);
      auto neg_it = data.negative_pools.find(row.query->id);
      if (neg_it != data.negative_pools.end() && !neg_it->second.empty()) {
        const auto& cands = neg_it->second;
        const std::size_t want =
            std::min(cfg.hard_negs_per_query, cands.size());
        for (std::size_t ci : sample_distinct(rng, cands.size(), want)) {
          const Document& d = data.corpus->by_id(cands[ci]);
          if (d.id != row.positive->id) row.negatives.push_back(&d);
        }
      }
      rows.push_back(std::move(row));
    }

    TrainingBatch batch =
        build_batch(rows, cfg.strategy, ctx, pools, rng);

    StepLog entry;
    entry.step = step;
    entry.lr = scheduled_lr(step, cfg.steps, cfg.lr);
    entry.phase = cfg.strategy.kind == StrategyKind::curriculum
                      ? phase_of_step(step, cfg.steps, cfg.k)
                      : 0;
    double rouge_sum = 0.0;
    for (const BatchRow& br : batch.rows) {
      auto account = [&](const ExpandedDoc& ed) {
        if (ed.expansions.empty()) return;
        ++entry.n_expanded;
        rouge_sum += ed.expansion_score;
        if (cfg.strategy.kind == StrategyKind::curriculum) {
          // Independent re-check that the sampled pool index lies in the
          // phase's group.
          const RankedQueryPool& pool = pools->at(ed.doc_id);
          GroupPartition part = partition_groups(pool, cfg.k);
          const std::size_t g = phase_of_step(step, cfg.steps, part.k);
          auto [lo, hi] = part.ranges[g];
          if (ed.pool_index < lo || ed.pool_index >= hi)
            ++entry.group_violations;
        }
      };
      account(br.positive);
      for (const ExpandedDoc& ed : br.hard_negatives) account(ed);
    }
    entry.mean_expansion_rouge =
        entry.n_expanded ? rouge_sum / static_cast<double>(entry.n_expanded)
                         : 0.0;

    auto [loss, grads] = loss_and_gradients(model, *data.vocab, batch, lim);
    if (!std::isfinite(loss))
      throw validation_error("train: loss diverged at step " +
                             std::to_string(step));
    entry.loss = loss;
    adam_step(model, grads, opt, entry.lr, 0.9, 0.999, 1e-8,
              cfg.weight_decay);
    log.entries.push_back(entry);
  }
  return {std::move(model), std::move(log)};
}

/// Top-`depth` BM25 candidates per query with judged positives removed,
/// truncated to `count`.
inline std::map<std::string, std::vector<std::string>> bm25_negative_pools(
    const Bm25Scorer& scorer, const std::vector<Query>& queries,
    const QRels& qrels, std::size_t depth, std::size_t count) {
  if (depth < count) throw config_error("bm25 negatives: depth must be >= count");
  std::map<std::string, std::vector<std::string>> pools;
  for (const Query& q : queries) {
    const auto& rel = qrels.relevant(q.id);
    std::vector<std::string> negs;
    for (const ScoredDoc& sd : scorer.top_k(q.tokens, depth)) {
      if (rel.count(sd.doc_id)) continue;
      negs.push_back(sd.doc_id);
      if (negs.size() == count) break;
    }
    pools[q.id] = std::move(negs);
  }
  return pools;
}

/// Retrieves top-`depth` documents per query with the model's typical
/// representation, removes judged positives, and samples `count` uniformly.
/// Queries with fewer than `count` candidates keep them all.
inline std::map<std::string, std::vector<std::string>> mine_hard_negatives(
    const EncoderModel& model, const TokenVocab& vocab, const Corpus& corpus,
    const GeneratedQueryStore& store, std::size_t s,
    const std::vector<Query>& queries, const QRels& qrels, std::size_t depth,
    std::size_t count, Rng& rng, const EncodeLimits& lim = {},
    std::size_t threads = 1) {
  if (depth < count)
    throw config_error("mine_hard_negatives: depth must be >= count");
  RetrievalIndex index = build_index(model, vocab, corpus, &store,
                                     IndexMode::typical, s, Pooling::average,
                                     lim, threads);
  std::map<std::string, std::vector<std::string>> mined;
  for (const Query& q : queries) {
    const auto& rel = qrels.relevant(q.id);
    SearchResult res = search(index, encode_query(model, vocab, q, lim), depth);
    std::vector<std::string> cands;
    for (const ScoredDoc& sd : res.hits)
      if (!rel.count(sd.doc_id)) cands.push_back(sd.doc_id);
    if (cands.size() < count)
      std::cerr << "mine_hard_negatives: query " << q.id << " has only "
                << cands.size() << " candidates (wanted " << count << ")\n";
    if (cands.size() > count) {
      std::vector<std::string> picked;
      picked.reserve(count);
      for (std::size_t ci : sample_distinct(rng, cands.size(), count))
        picked.push_back(cands[ci]);
      cands = std::move(picked);
    }
    mined[q.id] = std::move(cands);
  }
  return mined;
}

struct TwoStageResult {
  EncoderModel stage_one_model;
  TrainingLog stage_one_log;
  EncoderModel stage_two_model;
  TrainingLog stage_two_log;
  std::map<std::string, std::vector<std::string>> mined_negatives;
};

/// Stage one trains from scratch with BM25 negatives; stage two re-
/// initializes and trains with negatives mined by the stage-one model.
inline TwoStageResult train_two_stage(
    const StageConfig& cfg1, const StageConfig& cfg2, std::size_t dim,
    const Corpus& corpus, const TokenVocab& vocab,
    const std::vector<Query>& queries, const QRels& qrels,
    const GeneratedQueryStore& store, const PoolMap* pools,
    std::size_t neg_depth, std::size_t neg_count, std::size_t mine_s = 5,
    const EncodeLimits& lim = {}, std::size_t threads = 1) {
  if (cfg1.negative_source != NegativeSource::bm25)
    throw config_error("stage one must use bm25 negatives");
  if (cfg2.negative_source != NegativeSource::mined)
    throw config_error("stage two must use mined negatives");

  TwoStageResult result;
  TrainData data;
  data.corpus = &corpus;
  data.vocab = &vocab;
  data.queries = &queries;
  data.qrels = &qrels;

  Bm25Scorer scorer(corpus);
  data.negative_pools = bm25_negative_pools(scorer, queries, qrels, neg_depth,
                                            neg_count);
  EncoderModel init1 =
      init_model(vocab.size(), dim, derive_seed(cfg1.seed, "init"));
  std::tie(result.stage_one_model, result.stage_one_log) =
      train(cfg1, data, pools, std::move(init1), lim);

  Rng mine_rng(derive_seed(cfg2.seed, "mine"));
  result.mined_negatives = mine_hard_negatives(
      result.stage_one_model, vocab, corpus, store, mine_s, queries, qrels,
      neg_depth, neg_count, mine_rng, lim, threads);
  data.negative_pools = result.mined_negatives;

  EncoderModel init2 =
      init_model(vocab.size(), dim, derive_seed(cfg2.seed, "init"));
  std::tie(result.stage_two_model, result.stage_two_log) =
      train(cfg2, data, pools, std::move(init2), lim);
  return result;
}

inline void save_negatives(
    const std::map<std::string, std::vector<std::string>>& negs,
    const std::filesystem::path& path, const std::string& header_comment = {}) {
  std::string out;
  if (!header_comment.empty()) out += "# " + header_comment + "\n";
  for (const auto& [qid, docs] : negs)
    for (const auto& d : docs) out += qid + "\t" + d + "\n";
  write_file(path, out);
}

inline std::map<std::string, std::vector<std::string>> load_negatives(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::map<std::string, std::vector<std::string>> negs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw parse_error(path.string() + ":" + std::to_string(lineno) +
                        ": missing tab separator");
    negs[line.substr(0, tab)].push_back(line.substr(tab + 1));
  }
  if (negs.empty()) throw validation_error(path.string() + ": no negatives");
  return negs;
}

}  // namespace capstone
