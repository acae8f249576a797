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

#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "capstone/experiment.hpp"

namespace {

using namespace capstone;
namespace fs = std::filesystem;
using nlohmann::json;

std::string json_scalar(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

/// Expands a flat JSON config file ({"steps": 300, "fidelities": [0, 1]})
/// into command-line tokens. Keys already given as flags are skipped, so
/// flags override file values.
std::vector<std::string> apply_json_config(std::vector<std::string> args) {
  std::string config_file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      config_file = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      config_file = args[i].substr(9);
  }
  if (config_file.empty()) return args;
  json j;
  try {
    j = json::parse(read_file(config_file));
  } catch (const json::exception& e) {
    throw config_error(config_file + ": " + e.what());
  }
  if (!j.is_object())
    throw config_error(config_file + ": config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (given) continue;
    if (value.is_object())
      throw config_error(config_file + ": nested value for key " + key);
    args.push_back(flag);
    if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) {
        if (!joined.empty()) joined += ",";
        joined += json_scalar(v);
      }
      args.push_back(joined);
    } else {
      args.push_back(json_scalar(value));
    }
  }
  return args;
}

fs::path resolve(const fs::path& out_dir, const fs::path& p) {
  return p.is_absolute() ? p : out_dir / p;
}

void add_config_option(CLI::App* sub) {
  static std::string config_path;
  sub->add_option("--config", config_path,
                  "flat JSON config file; flags override it");
}

std::map<std::string, Query> gold_queries_by_doc(
    const std::vector<Query>& queries, const QRels& qrels) {
  std::map<std::string, Query> golds;
  for (const Query& q : queries) {
    if (!qrels.has(q.id)) continue;
    for (const auto& d : qrels.relevant(q.id)) golds.emplace(d, q);
  }
  return golds;
}

// --------------------------------------------------------------------------
// synth-data
// --------------------------------------------------------------------------

struct SynthOpts {
  std::string out = ".";
  std::uint64_t seed = 1;
  SynthConfig cfg;
  std::size_t n_train = 0;
  std::size_t n_eval = 0;
};

void add_synth_flags(CLI::App* sub, SynthOpts& o) {
  sub->add_option("--vocab-size", o.cfg.vocab_size, "synthetic vocabulary size");
  sub->add_option("--n-docs", o.cfg.n_docs, "number of documents");
  sub->add_option("--doc-len", o.cfg.doc_len, "tokens per document");
  sub->add_option("--n-queries", o.cfg.n_queries, "number of gold queries");
  sub->add_option("--queries-per-doc", o.cfg.queries_per_doc,
                  "pseudo-queries per document");
  sub->add_option("--fidelities", o.cfg.fidelities,
                  "per-slot fidelity in [0,1], cycled over slots")
      ->delimiter(',');
  sub->add_option("--salient-per-doc", o.cfg.salient_per_doc,
                  "salient token types per document");
  sub->add_option("--salient-mass", o.cfg.salient_mass,
                  "fraction of positions drawn from salient types");
  sub->add_option("--gold-len", o.cfg.gold_query_len, "gold query length");
}

void run_synth(const SynthOpts& o) {
  SynthDataset ds = synthesize_dataset(o.cfg, o.seed);
  const fs::path out(o.out);
  json cfg_json = o.cfg;
  cfg_json["seed"] = o.seed;
  const std::uint64_t hash = fnv1a64(cfg_json.dump());

  save_corpus(ds.corpus, out / "corpus.jsonl");
  save_queries(ds.queries, out / "queries.tsv");
  save_qrels(ds.qrels, out / "qrels.trec");
  save_generated_queries(ds.store, out / "generated_queries.tsv");
  std::vector<std::string> files = {"corpus.jsonl", "queries.tsv", "qrels.trec",
                                    "generated_queries.tsv"};
  if (o.n_train > 0 || o.n_eval > 0) {
    if (o.n_train + o.n_eval != ds.queries.size())
      throw config_error("n-train + n-eval must equal n-queries");
    std::vector<Query> train(ds.queries.begin(),
                             ds.queries.begin() + static_cast<long>(o.n_train));
    std::vector<Query> eval(ds.queries.begin() + static_cast<long>(o.n_train),
                            ds.queries.end());
    save_queries(train, out / "queries_train.tsv");
    save_queries(eval, out / "queries_eval.tsv");
    files.push_back("queries_train.tsv");
    files.push_back("queries_eval.tsv");
  }
  // Dataset files follow strict external formats, so the config hash lives in
  // a sidecar manifest.
  json manifest{{"command", "synth-data"},
                {"config_hash", hash_hex(hash)},
                {"config", cfg_json},
                {"files", files}};
  write_file(out / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "synthesized " << ds.corpus.size() << " docs, "
            << ds.queries.size() << " queries into " << out.string() << "\n";
}

// --------------------------------------------------------------------------
// rank-pools
// --------------------------------------------------------------------------

struct RankPoolsOpts {
  std::string out = ".";
  std::string corpus = "corpus.jsonl";
  std::string queries = "queries.tsv";
  std::string qrels = "qrels.trec";
  std::string generated = "generated_queries.tsv";
  std::string pools_out = "pools.tsv";
  std::size_t gold_len = 5;
};

void run_rank_pools(const RankPoolsOpts& o) {
  const fs::path out(o.out);
  Corpus corpus = load_corpus(resolve(out, o.corpus));
  auto queries = load_queries(resolve(out, o.queries));
  QRels qrels = load_qrels(resolve(out, o.qrels), &corpus);
  GeneratedQueryStore store =
      load_generated_queries(resolve(out, o.generated), corpus);
  PoolMap pools = rank_all_pools(corpus, store, gold_queries_by_doc(queries, qrels),
                                 true, o.gold_len);
  json cfg{{"command", "rank-pools"}, {"corpus", o.corpus},
           {"generated", o.generated}, {"gold_len", o.gold_len}};
  save_pools(pools, resolve(out, o.pools_out),
             "config_hash=" + hash_hex(fnv1a64(cfg.dump())) +
                 " rouge=sentence_f1_no_stemming");
  std::cout << "ranked pools for " << pools.size() << " documents\n";
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

struct TrainOpts {
  std::string out = ".";
  std::string corpus = "corpus.jsonl";
  std::string queries = "queries_train.tsv";
  std::string qrels = "qrels.trec";
  std::string generated = "generated_queries.tsv";
  std::string pools;      // optional pool cache
  std::string negatives;  // optional mined negatives for a single stage
  std::string strategy = "curriculum";
  std::size_t stages = 1;
  StageConfig stage;
  std::size_t steps2 = 0;  // 0: same as --steps
  std::size_t k2 = 4;
  std::size_t dim = 24;
  std::size_t neg_depth = 30;
  std::size_t neg_count = 20;
  std::size_t mine_s = 5;
  std::string model_out = "model.bin";
  std::string vocab_out = "vocab.txt";
  std::string log_out = "trainlog.jsonl";
};

void run_train(const TrainOpts& o) {
  const fs::path out(o.out);
  Corpus corpus = load_corpus(resolve(out, o.corpus));
  auto queries = load_queries(resolve(out, o.queries));
  QRels qrels = load_qrels(resolve(out, o.qrels), &corpus);
  GeneratedQueryStore store =
      load_generated_queries(resolve(out, o.generated), corpus);
  TokenVocab vocab = TokenVocab::build(corpus, &store);

  StageConfig cfg = o.stage;
  cfg.strategy = SelectionStrategy::parse(o.strategy);

  json cfg_json{{"command", "train"},   {"strategy", o.strategy},
                {"stages", o.stages},   {"steps", cfg.steps},
                {"batch_size", cfg.batch_size},
                {"hard_negs", cfg.hard_negs_per_query},
                {"lr", cfg.lr},         {"weight_decay", cfg.weight_decay},
                {"K", cfg.k},           {"K2", o.k2},
                {"steps2", o.steps2},   {"seed", cfg.seed},
                {"dim", o.dim},         {"neg_depth", o.neg_depth},
                {"neg_count", o.neg_count}, {"mine_s", o.mine_s}};
  const std::uint64_t hash = fnv1a64(cfg_json.dump());

  PoolMap pools;
  const PoolMap* pools_ptr = nullptr;
  if (!o.pools.empty()) {
    pools = load_pools(resolve(out, o.pools));
    pools_ptr = &pools;
  } else if (cfg.strategy.needs_pool()) {
    pools = rank_all_pools(corpus, store, gold_queries_by_doc(queries, qrels));
    pools_ptr = &pools;
  }

  vocab.save(resolve(out, o.vocab_out), "config_hash=" + hash_hex(hash));

  if (o.stages == 1) {
    TrainData data;
    data.corpus = &corpus;
    data.vocab = &vocab;
    data.queries = &queries;
    data.qrels = &qrels;
    if (!o.negatives.empty()) {
      data.negative_pools = load_negatives(resolve(out, o.negatives));
      cfg.negative_source = NegativeSource::mined;
    } else {
      Bm25Scorer scorer(corpus);
      data.negative_pools =
          bm25_negative_pools(scorer, queries, qrels, o.neg_depth, o.neg_count);
      cfg.negative_source = NegativeSource::bm25;
    }
    EncoderModel init =
        init_model(vocab.size(), o.dim, derive_seed(cfg.seed, "init"));
    auto [model, log] = train(cfg, data, pools_ptr, std::move(init));
    save_model(model, resolve(out, o.model_out), hash);
    save_training_log(log, resolve(out, o.log_out), hash);
    std::cout << "trained " << cfg.strategy.to_string() << " for " << cfg.steps
              << " steps; final loss "
              << (log.entries.empty() ? 0.0 : log.entries.back().loss) << "\n";
  } else if (o.stages == 2) {
    StageConfig cfg2 = cfg;
    cfg2.steps = o.steps2 == 0 ? cfg.steps : o.steps2;
    cfg2.k = o.k2;
    cfg2.seed = derive_seed(cfg.seed, "stage2");
    cfg2.negative_source = NegativeSource::mined;
    cfg.negative_source = NegativeSource::bm25;
    TwoStageResult res = train_two_stage(cfg, cfg2, o.dim, corpus, vocab,
                                         queries, qrels, store, pools_ptr,
                                         o.neg_depth, o.neg_count, o.mine_s,
                                         {}, threads_from_env());
    fs::path model_path = resolve(out, o.model_out);
    fs::path stage1_path = model_path.parent_path() /
                           (model_path.stem().string() + "_stage1" +
                            model_path.extension().string());
    save_model(res.stage_one_model, stage1_path, hash);
    save_model(res.stage_two_model, model_path, hash);
    fs::path log_path = resolve(out, o.log_out);
    save_training_log(res.stage_one_log,
                      log_path.parent_path() /
                          (log_path.stem().string() + "_stage1" +
                           log_path.extension().string()),
                      hash);
    save_training_log(res.stage_two_log, log_path, hash);
    save_negatives(res.mined_negatives, resolve(out, "mined_negatives.tsv"),
                   "config_hash=" + hash_hex(hash));
    std::cout << "two-stage training done; stage-two final loss "
              << (res.stage_two_log.entries.empty()
                      ? 0.0
                      : res.stage_two_log.entries.back().loss)
              << "\n";
  } else {
    throw config_error("--stages must be 1 or 2");
  }
}

// --------------------------------------------------------------------------
// mine-negatives
// --------------------------------------------------------------------------

struct MineOpts {
  std::string out = ".";
  std::string model = "model.bin";
  std::string vocab = "vocab.txt";
  std::string corpus = "corpus.jsonl";
  std::string generated = "generated_queries.tsv";
  std::string queries = "queries_train.tsv";
  std::string qrels = "qrels.trec";
  std::size_t s = 5;
  std::size_t depth = 30;
  std::size_t count = 20;
  std::uint64_t seed = 1;
  std::string negatives_out = "negatives.tsv";
};

void run_mine(const MineOpts& o) {
  const fs::path out(o.out);
  EncoderModel model = load_model(resolve(out, o.model));
  TokenVocab vocab = TokenVocab::load(resolve(out, o.vocab));
  Corpus corpus = load_corpus(resolve(out, o.corpus));
  GeneratedQueryStore store =
      load_generated_queries(resolve(out, o.generated), corpus);
  auto queries = load_queries(resolve(out, o.queries));
  QRels qrels = load_qrels(resolve(out, o.qrels), &corpus);
  Rng rng(derive_seed(o.seed, "mine"));
  auto mined = mine_hard_negatives(model, vocab, corpus, store, o.s, queries,
                                   qrels, o.depth, o.count, rng, {},
                                   threads_from_env());
  json cfg{{"command", "mine-negatives"}, {"s", o.s},     {"depth", o.depth},
           {"count", o.count},            {"seed", o.seed}};
  save_negatives(mined, resolve(out, o.negatives_out),
                 "config_hash=" + hash_hex(fnv1a64(cfg.dump())));
  std::cout << "mined negatives for " << mined.size() << " queries\n";
}

// --------------------------------------------------------------------------
// build-index
// --------------------------------------------------------------------------

struct BuildIndexOpts {
  std::string out = ".";
  std::string model = "model.bin";
  std::string vocab = "vocab.txt";
  std::string corpus = "corpus.jsonl";
  std::string generated = "generated_queries.tsv";
  std::string mode = "typical";
  std::size_t s = 5;
  std::string pooling = "average";
  std::string index_out = "index.bin";
};

void run_build_index(const BuildIndexOpts& o) {
  const fs::path out(o.out);
  EncoderModel model = load_model(resolve(out, o.model));
  TokenVocab vocab = TokenVocab::load(resolve(out, o.vocab));
  Corpus corpus = load_corpus(resolve(out, o.corpus));
  IndexMode mode = index_mode_from_string(o.mode);
  GeneratedQueryStore store;
  const GeneratedQueryStore* store_ptr = nullptr;
  if (mode != IndexMode::no_expansion) {
    store = load_generated_queries(resolve(out, o.generated), corpus);
    store_ptr = &store;
  }
  json cfg{{"command", "build-index"}, {"mode", o.mode},
           {"s", o.s},                 {"pooling", o.pooling}};
  RetrievalIndex index =
      build_index(model, vocab, corpus, store_ptr, mode, o.s,
                  pooling_from_string(o.pooling), {}, threads_from_env());
  save_index(index, resolve(out, o.index_out), fnv1a64(cfg.dump()));
  std::cout << "built " << to_string(mode) << " index: " << index.rows()
            << " rows over " << index.n_docs << " docs\n";
}

// --------------------------------------------------------------------------
// search
// --------------------------------------------------------------------------

struct SearchOpts {
  std::string out = ".";
  std::string index = "index.bin";
  std::string model = "model.bin";
  std::string vocab = "vocab.txt";
  std::string queries = "queries_eval.tsv";
  std::size_t m = 10;
  std::string tag;
  std::string run_out = "run.trec";
};

void run_search(const SearchOpts& o) {
  const fs::path out(o.out);
  RetrievalIndex index = load_index(resolve(out, o.index));
  EncoderModel model = load_model(resolve(out, o.model));
  TokenVocab vocab = TokenVocab::load(resolve(out, o.vocab));
  auto queries = load_queries(resolve(out, o.queries));
  json cfg{{"command", "search"}, {"index", o.index}, {"m", o.m}};
  const std::string tag =
      o.tag.empty() ? "cap-" + hash_hex(fnv1a64(cfg.dump())).substr(0, 8)
                    : o.tag;
  Run run;
  run.reserve(queries.size());
  for (const Query& q : queries)
    run.emplace_back(q.id, search(index, encode_query(model, vocab, q), o.m));
  save_run_file(run, resolve(out, o.run_out), tag);
  std::cout << "searched " << queries.size() << " queries, top-" << o.m
            << " -> " << o.run_out << "\n";
}

// --------------------------------------------------------------------------
// evaluate
// --------------------------------------------------------------------------

struct EvaluateOpts {
  std::string out = ".";
  std::string run = "run.trec";
  std::string qrels = "qrels.trec";
  std::vector<std::string> metrics = {"mrr@10"};
  ReportMeta meta;
  std::string report_out = "report.json";
  std::string csv_out = "report.csv";
};

void run_evaluate(const EvaluateOpts& o) {
  const fs::path out(o.out);
  RankedLists lists = load_run_file(resolve(out, o.run));
  QRels qrels = load_qrels(resolve(out, o.qrels));
  std::vector<MetricSpec> specs;
  for (const auto& m : o.metrics) specs.push_back(MetricSpec::parse(m));
  MetricReport report = evaluate_run(lists, qrels, specs, o.meta);
  json cfg{{"command", "evaluate"}, {"metrics", o.metrics}};
  const std::uint64_t hash = fnv1a64(cfg.dump());
  write_file(resolve(out, o.report_out), report_json(report, hash).dump(2) + "\n");
  std::string csv = "# config_hash=" + hash_hex(hash) + "\n";
  csv += "strategy,mode,S,K,seed,metric,value\n";
  csv += report_csv_rows(report);
  write_file(resolve(out, o.csv_out), csv);
  for (const auto& [metric, value] : report.aggregates)
    std::cout << metric << "=" << format_double(value) << "\n";
}

// --------------------------------------------------------------------------
// gradcheck
// --------------------------------------------------------------------------

struct GradcheckOpts {
  std::size_t batches = 20;
  std::size_t batch_size = 4;
  std::size_t hard_negs = 2;
  std::size_t dim = 16;
  std::size_t vocab = 500;
  double eps = 1e-5;
  std::size_t coords = 200;
  std::uint64_t seed = 7;
  double tol = 1e-4;
};

TrainingBatch random_batch(Rng& rng, const Tokens& tokens, std::size_t rows,
                           std::size_t negs) {
  auto rand_tokens = [&](std::size_t lo, std::size_t hi) {
    const std::size_t n = lo + uniform_index(rng, hi - lo + 1);
    Tokens t;
    for (std::size_t i = 0; i < n; ++i)
      t.push_back(tokens[uniform_index(rng, tokens.size())]);
    return t;
  };
  TrainingBatch batch;
  const std::size_t b = 1 + uniform_index(rng, rows);
  for (std::size_t r = 0; r < b; ++r) {
    BatchRow row;
    row.query = Query{"q" + std::to_string(r), rand_tokens(3, 8)};
    auto make_doc = [&](const std::string& id) {
      ExpandedDoc d;
      d.doc_id = id;
      d.tokens = rand_tokens(5, 30);
      if (uniform_real(rng) < 0.7) d.expansions.push_back(rand_tokens(2, 6));
      return d;
    };
    row.positive = make_doc("d" + std::to_string(r) + "p");
    for (std::size_t j = 0; j < negs; ++j)
      row.hard_negatives.push_back(
          make_doc("d" + std::to_string(r) + "n" + std::to_string(j)));
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

void run_gradcheck(const GradcheckOpts& o) {
  Rng rng(o.seed);
  Tokens tokens;
  for (std::size_t i = 0; i < o.vocab; ++i)
    tokens.push_back("t" + std::to_string(i));
  TokenVocab vocab = TokenVocab::from_tokens(tokens);
  double overall = 0.0;
  for (std::size_t i = 0; i < o.batches; ++i) {
    EncoderModel model =
        init_model(vocab.size(), o.dim, derive_seed(o.seed, "m" + std::to_string(i)));
    TrainingBatch batch = random_batch(rng, tokens, o.batch_size, o.hard_negs);
    const double err = finite_difference_check(
        model, vocab, batch, o.eps, o.coords,
        derive_seed(o.seed, "c" + std::to_string(i)));
    overall = std::max(overall, err);
  }
  std::cout << "max_rel_error=" << format_double(overall) << "\n";
  if (overall > o.tol) {
    std::cout << "FAIL (tolerance " << format_double(o.tol) << ")\n";
    std::exit(1);
  }
  std::cout << "PASS (tolerance " << format_double(o.tol) << ")\n";
}

// --------------------------------------------------------------------------
// experiment
// --------------------------------------------------------------------------

struct ExperimentOpts {
  std::string out = ".";
  ExperimentConfig cfg;
  std::size_t threads = threads_from_env();
};

void run_experiment_cmd(const ExperimentOpts& o) {
  const fs::path out(o.out);
  ExperimentResult result = run_experiment(o.cfg, out, o.threads, &std::cerr);
  save_cells_csv(result.rows, out / "results.csv", result.hash, true);
  save_cells_csv(result.summary, out / "summary.csv", result.hash, false);
  std::cout << "strategy,mode,S,metric,mean\n";
  for (const CellRow& r : result.summary)
    std::cout << r.strategy << "," << r.mode << "," << r.s << "," << r.metric
              << "," << format_double(r.value) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capstone: curriculum-sampled document expansion retrieval lab"};
  app.name("capstone");
  app.require_subcommand(1);

  auto synth = std::make_shared<SynthOpts>();
  {
    CLI::App* sub = app.add_subcommand("synth-data", "synthesize a dataset");
    add_config_option(sub);
    sub->add_option("--out", synth->out, "output directory");
    sub->add_option("--seed", synth->seed, "dataset seed");
    add_synth_flags(sub, *synth);
    sub->add_option("--n-train", synth->n_train, "training-query split size");
    sub->add_option("--n-eval", synth->n_eval, "eval-query split size");
    sub->callback([synth] { run_synth(*synth); });
  }

  auto rankp = std::make_shared<RankPoolsOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("rank-pools", "rank pseudo-query pools by ROUGE-L");
    add_config_option(sub);
    sub->add_option("--out", rankp->out, "working directory");
    sub->add_option("--corpus", rankp->corpus, "corpus JSONL");
    sub->add_option("--queries", rankp->queries, "queries TSV");
    sub->add_option("--qrels", rankp->qrels, "qrels file");
    sub->add_option("--generated", rankp->generated, "generated queries TSV");
    sub->add_option("--gold-len", rankp->gold_len,
                    "fallback gold-query length for unjudged docs");
    sub->add_option("--pools-out", rankp->pools_out, "pool cache output");
    sub->callback([rankp] { run_rank_pools(*rankp); });
  }

  auto traino = std::make_shared<TrainOpts>();
  {
    CLI::App* sub = app.add_subcommand("train", "train the dual-cross-encoder");
    add_config_option(sub);
    sub->add_option("--out", traino->out, "working directory");
    sub->add_option("--corpus", traino->corpus, "corpus JSONL");
    sub->add_option("--queries", traino->queries, "training queries TSV");
    sub->add_option("--qrels", traino->qrels, "qrels file");
    sub->add_option("--generated", traino->generated, "generated queries TSV");
    sub->add_option("--pools", traino->pools, "pool cache (optional)");
    sub->add_option("--negatives", traino->negatives,
                    "mined negatives TSV (optional; default BM25)");
    sub->add_option("--strategy", traino->strategy,
                    "none|gold|random|top_k|bottom_k|curriculum");
    sub->add_option("--stages", traino->stages, "1 or 2 (BM25 then mined)");
    sub->add_option("--steps", traino->stage.steps, "optimizer steps");
    sub->add_option("--batch-size", traino->stage.batch_size, "queries per batch");
    sub->add_option("--hard-negs", traino->stage.hard_negs_per_query,
                    "hard negatives per query");
    sub->add_option("--lr", traino->stage.lr, "peak learning rate");
    sub->add_option("--weight-decay", traino->stage.weight_decay, "AdamW decay");
    sub->add_option("--k", traino->stage.k, "curriculum groups (stage one)");
    sub->add_option("--k2", traino->k2, "curriculum groups (stage two)");
    sub->add_option("--steps2", traino->steps2, "stage-two steps (0 = same)");
    sub->add_option("--seed", traino->stage.seed, "training seed");
    sub->add_option("--dim", traino->dim, "embedding dimension");
    sub->add_option("--neg-depth", traino->neg_depth, "negative pool depth");
    sub->add_option("--neg-count", traino->neg_count, "negative pool size");
    sub->add_option("--mine-s", traino->mine_s, "views used when mining");
    sub->add_option("--model-out", traino->model_out, "checkpoint output");
    sub->add_option("--vocab-out", traino->vocab_out, "vocabulary output");
    sub->add_option("--log-out", traino->log_out, "training log output");
    sub->callback([traino] { run_train(*traino); });
  }

  auto mineo = std::make_shared<MineOpts>();
  {
    CLI::App* sub =
        app.add_subcommand("mine-negatives", "mine hard negatives with a model");
    add_config_option(sub);
    sub->add_option("--out", mineo->out, "working directory");
    sub->add_option("--model", mineo->model, "checkpoint");
    sub->add_option("--vocab", mineo->vocab, "vocabulary file");
    sub->add_option("--corpus", mineo->corpus, "corpus JSONL");
    sub->add_option("--generated", mineo->generated, "generated queries TSV");
    sub->add_option("--queries", mineo->queries, "queries TSV");
    sub->add_option("--qrels", mineo->qrels, "qrels file");
    sub->add_option("--s", mineo->s, "views per document");
    sub->add_option("--depth", mineo->depth, "retrieval depth");
    sub->add_option("--count", mineo->count, "negatives kept per query");
    sub->add_option("--seed", mineo->seed, "sampling seed");
    sub->add_option("--negatives-out", mineo->negatives_out, "output TSV");
    sub->callback([mineo] { run_mine(*mineo); });
  }

  auto buildo = std::make_shared<BuildIndexOpts>();
  {
    CLI::App* sub = app.add_subcommand("build-index", "encode and index a corpus");
    add_config_option(sub);
    sub->add_option("--out", buildo->out, "working directory");
    sub->add_option("--model", buildo->model, "checkpoint");
    sub->add_option("--vocab", buildo->vocab, "vocabulary file");
    sub->add_option("--corpus", buildo->corpus, "corpus JSONL");
    sub->add_option("--generated", buildo->generated, "generated queries TSV");
    sub->add_option("--mode", buildo->mode,
                    "no_expansion|corpus_expansion|typical|document_expansion|"
                    "asymmetric");
    sub->add_option("--s", buildo->s, "views per document");
    sub->add_option("--pooling", buildo->pooling, "average|max|median");
    sub->add_option("--index-out", buildo->index_out, "index output");
    sub->callback([buildo] { run_build_index(*buildo); });
  }

  auto searcho = std::make_shared<SearchOpts>();
  {
    CLI::App* sub = app.add_subcommand("search", "retrieve top-M documents");
    add_config_option(sub);
    sub->add_option("--out", searcho->out, "working directory");
    sub->add_option("--index", searcho->index, "index file");
    sub->add_option("--model", searcho->model, "checkpoint");
    sub->add_option("--vocab", searcho->vocab, "vocabulary file");
    sub->add_option("--queries", searcho->queries, "queries TSV");
    sub->add_option("--m", searcho->m, "results per query");
    sub->add_option("--tag", searcho->tag, "run tag (default: config hash)");
    sub->add_option("--run-out", searcho->run_out, "run file output");
    sub->callback([searcho] { run_search(*searcho); });
  }

  auto evalo = std::make_shared<EvaluateOpts>();
  {
    CLI::App* sub = app.add_subcommand("evaluate", "score a run file");
    add_config_option(sub);
    sub->add_option("--out", evalo->out, "working directory");
    sub->add_option("--run", evalo->run, "run file");
    sub->add_option("--qrels", evalo->qrels, "qrels file");
    sub->add_option("--metrics", evalo->metrics, "e.g. mrr@10,recall@50,ndcg@10")
        ->delimiter(',');
    sub->add_option("--strategy", evalo->meta.strategy, "metadata: strategy");
    sub->add_option("--mode", evalo->meta.mode, "metadata: index mode");
    sub->add_option("--s", evalo->meta.s, "metadata: S");
    sub->add_option("--k", evalo->meta.k, "metadata: K");
    sub->add_option("--seed", evalo->meta.seed, "metadata: seed");
    sub->add_option("--report-out", evalo->report_out, "JSON report output");
    sub->add_option("--csv-out", evalo->csv_out, "CSV report output");
    sub->callback([evalo] { run_evaluate(*evalo); });
  }

  auto grado = std::make_shared<GradcheckOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "gradcheck", "finite-difference check of the analytic gradients");
    add_config_option(sub);
    sub->add_option("--batches", grado->batches, "random batches to test");
    sub->add_option("--batch-size", grado->batch_size, "max rows per batch");
    sub->add_option("--hard-negs", grado->hard_negs, "hard negatives per row");
    sub->add_option("--dim", grado->dim, "embedding dimension");
    sub->add_option("--vocab", grado->vocab, "token types");
    sub->add_option("--eps", grado->eps, "central-difference step");
    sub->add_option("--coords", grado->coords, "coordinates sampled per batch");
    sub->add_option("--seed", grado->seed, "seed");
    sub->add_option("--tol", grado->tol, "failure threshold");
    sub->callback([grado] { run_gradcheck(*grado); });
  }

  auto expo = std::make_shared<ExperimentOpts>();
  {
    CLI::App* sub = app.add_subcommand(
        "experiment", "strategy/S/mode/seed sweep with cached checkpoints");
    add_config_option(sub);
    sub->add_option("--out", expo->out, "output directory");
    sub->add_option("--threads", expo->threads, "encoding threads");
    sub->add_option("--vocab-size", expo->cfg.dataset.vocab_size, "vocabulary");
    sub->add_option("--n-docs", expo->cfg.dataset.n_docs, "documents");
    sub->add_option("--doc-len", expo->cfg.dataset.doc_len, "tokens per doc");
    sub->add_option("--n-queries", expo->cfg.dataset.n_queries, "gold queries");
    sub->add_option("--queries-per-doc", expo->cfg.dataset.queries_per_doc,
                    "pseudo-queries per doc");
    sub->add_option("--fidelities", expo->cfg.dataset.fidelities,
                    "per-slot fidelities")
        ->delimiter(',');
    sub->add_option("--salient-per-doc", expo->cfg.dataset.salient_per_doc,
                    "salient types per doc");
    sub->add_option("--salient-mass", expo->cfg.dataset.salient_mass,
                    "salient position fraction");
    sub->add_option("--gold-len", expo->cfg.dataset.gold_query_len,
                    "gold query length");
    sub->add_option("--n-train", expo->cfg.n_train_queries, "train queries");
    sub->add_option("--n-eval", expo->cfg.n_eval_queries, "eval queries");
    sub->add_option("--dim", expo->cfg.dim, "embedding dimension");
    sub->add_option("--steps", expo->cfg.stage.steps, "optimizer steps");
    sub->add_option("--batch-size", expo->cfg.stage.batch_size, "batch size");
    sub->add_option("--hard-negs", expo->cfg.stage.hard_negs_per_query,
                    "hard negatives per query");
    sub->add_option("--lr", expo->cfg.stage.lr, "peak learning rate");
    sub->add_option("--weight-decay", expo->cfg.stage.weight_decay,
                    "AdamW decay");
    sub->add_option("--k", expo->cfg.stage.k, "curriculum groups");
    sub->add_option("--neg-depth", expo->cfg.neg_depth, "negative pool depth");
    sub->add_option("--neg-count", expo->cfg.neg_count, "negative pool size");
    sub->add_option("--strategies", expo->cfg.strategies, "strategy sweep")
        ->delimiter(',');
    sub->add_option("--s-values", expo->cfg.s_values, "S sweep")->delimiter(',');
    sub->add_option("--modes", expo->cfg.modes, "index mode sweep")
        ->delimiter(',');
    sub->add_option("--poolings", expo->cfg.poolings, "typical pooling sweep")
        ->delimiter(',');
    sub->add_option("--seeds", expo->cfg.seeds, "seed sweep")->delimiter(',');
    sub->add_option("--metrics", expo->cfg.metrics, "metric sweep")
        ->delimiter(',');
    sub->callback([expo] { run_experiment_cmd(*expo); });
  }

  std::string command;
  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty()) command = args.front();
    args = apply_json_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 expects reversed args
    app.parse(std::move(args));
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    for (const auto* sub : app.get_subcommands())
      command = sub->get_name();
    nlohmann::json err{{"error", e.what()}, {"command", command}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
