#include "commands.hpp"

#include "ed2lm/bench.hpp"
#include "ed2lm/generation.hpp"
#include "ed2lm/memstore.hpp"
#include "ed2lm/metrics.hpp"
#include "ed2lm/parameters.hpp"
#include "ed2lm/ranking_run.hpp"
#include "ed2lm/retrieval.hpp"
#include "ed2lm/synth.hpp"
#include "ed2lm/training.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace ed2lm::cli {

namespace {

void prepare_out(const GlobalOptions& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  if (fs::exists(g.out)) {
    if (!fs::is_directory(g.out)) throw InputError("--out " + g.out.string() + " is not a directory");
    if (!fs::is_empty(g.out) && !g.force) {
      throw OutputExistsError("output directory " + g.out.string() + " is not empty (use --force to overwrite)");
    }
  }
  fs::create_directories(g.out);
}

void require_file(const fs::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string(flag) + " is required");
  if (!fs::is_regular_file(p)) throw InputError(std::string(flag) + " " + p.string() + " does not exist");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw InputError("cannot write " + p.string());
  return f;
}

struct Model {
  Checkpoint ckpt;
  Vocabulary vocab;
};

Model load_model(const fs::path& dir, RunManifest& m) {
  if (dir.empty()) throw ConfigError("--model is required");
  const fs::path ckpt = dir / kCheckpointName;
  const fs::path vocab = dir / kVocabName;
  require_file(ckpt, "--model checkpoint");
  require_file(vocab, "--model vocabulary");
  Model model{load_checkpoint(ckpt), Vocabulary::load(vocab)};
  if (model.vocab.size() != model.ckpt.config.vocab_size) {
    throw ConfigError("vocabulary has " + std::to_string(model.vocab.size()) + " entries but the checkpoint expects " +
                      std::to_string(model.ckpt.config.vocab_size));
  }
  m.inputs.push_back(ckpt);
  m.inputs.push_back(vocab);
  return model;
}

void check_store(const MemoryStore& store, const ModelConfig& config) {
  if (store.d_model() != config.d_model || store.funnel_blocks() != config.funnel_blocks) {
    throw ConfigError("memory store (d_model " + std::to_string(store.d_model()) + ", funnel_blocks " +
                      std::to_string(store.funnel_blocks()) + ") was not built by this model (d_model " +
                      std::to_string(config.d_model) + ", funnel_blocks " + std::to_string(config.funnel_blocks) +
                      ")");
  }
}

ModelConfig arch_config(const ArchOptions& a) {
  ModelConfig c;
  c.num_encoder_layers = a.encoder_layers;
  c.num_decoder_layers = a.decoder_layers;
  c.d_model = a.d_model;
  c.num_heads = a.heads;
  c.d_ff = a.d_ff;
  c.max_doc_len = a.max_doc_len;
  c.max_query_len = a.max_query_len;
  c.funnel_blocks = a.funnel_blocks;
  return c;
}

void print_mean(const EvalReport& r) {
  std::printf("%s\t%.6f\n", r.metric.c_str(), r.mean);
}

}  // namespace

void run_synth(const GlobalOptions& g, const SynthOptions& o, const nlohmann::ordered_json& config) {
  if (o.docs < 1 || o.queries < 1) throw ConfigError("--docs and --queries must be at least 1");
  prepare_out(g);
  SynthConfig sc;
  sc.num_docs = o.docs;
  sc.num_queries = o.queries;
  sc.num_train_queries = o.train_queries;
  sc.vocab_words = o.vocab;
  sc.query_noise = o.noise;
  sc.seed = g.seed;
  const SynthDataset data = synthesize(sc);
  write_dataset(data, g.out);
  spdlog::info("synth: {} docs, {} queries, {} training pairs", data.corpus.docs.size(), data.queries.size(),
               data.train_pairs.size());

  RunManifest m("synth", config, g.seed);
  for (const char* f : {DatasetFiles::corpus, DatasetFiles::queries, DatasetFiles::qrels, DatasetFiles::train_queries,
                        DatasetFiles::train_pairs}) {
    m.outputs.emplace_back(f);
  }
  m.write(g.out);
}

void run_train(const GlobalOptions& g, const TrainOptions& o, const nlohmann::ordered_json& config) {
  const auto pick = [&](const fs::path& explicit_path, const char* name) {
    return !explicit_path.empty() ? explicit_path : o.data.empty() ? fs::path{} : o.data / name;
  };
  const fs::path corpus_path = pick(o.corpus, DatasetFiles::corpus);
  const fs::path queries_path = pick(o.train_queries, DatasetFiles::train_queries);
  const fs::path pairs_path = pick(o.pairs, DatasetFiles::train_pairs);
  require_file(corpus_path, "--corpus");
  require_file(queries_path, "--train-queries");
  require_file(pairs_path, "--pairs");

  RunManifest m("train", config, g.seed);
  m.inputs = {corpus_path, queries_path, pairs_path};

  const Corpus corpus = read_corpus(corpus_path);
  const QuerySet queries = read_queries(queries_path);
  const auto pairs = read_training_pairs(pairs_path);

  ModelConfig mc = arch_config(o.arch);
  mc.seed = g.seed;
  Vocabulary vocab;
  Parameters<float> initial;
  if (!o.init.empty()) {
    const Model init = load_model(o.init, m);
    mc.vocab_size = init.ckpt.config.vocab_size;
    mc.seed = init.ckpt.config.seed;
    if (!(init.ckpt.config == mc)) throw ConfigError("--init checkpoint architecture differs from the requested one");
    init.ckpt.params.check_shapes(mc);
    vocab = init.vocab;
    initial = init.ckpt.params;
  } else {
    std::vector<std::string> texts;
    texts.reserve(corpus.docs.size());
    for (const auto& [id, text] : corpus.docs) texts.push_back(text);
    vocab = Vocabulary::build(texts, o.vocab_cap);
    mc.vocab_size = static_cast<std::uint32_t>(vocab.size());
  }
  mc.validate();

  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch_size = o.batch_size;
  tc.learning_rate = o.lr;
  tc.optimizer = parse_optimizer(o.optimizer);
  tc.loss_mode = parse_loss_mode(o.loss);
  tc.target_mode = parse_target_mode(o.target_mode);
  tc.seed = g.seed;
  tc.validate();

  const auto examples = make_training_examples(pairs, corpus, queries, vocab, mc);
  prepare_out(g);
  spdlog::info("train: {} examples, vocab {}, {} steps", examples.size(), vocab.size(), tc.steps);
  const std::size_t every = std::max<std::size_t>(1, tc.steps / 10);
  const TrainResult result =
      train(examples, tc, mc, o.init.empty() ? nullptr : &initial, [&](std::size_t step, const Parameters<float>&) {
        if (step % every == 0 || step == tc.steps) spdlog::info("train: step {}/{}", step, tc.steps);
      });

  save_checkpoint(g.out / kCheckpointName, mc, result.params);
  vocab.save(g.out / kVocabName);
  {
    auto f = open_out(g.out / "loss.csv");
    write_loss_log(f, result.log);
  }
  const auto& last = result.log.back();
  spdlog::info("train: final batch loss ce {:.4f} ql {:.4f}", last.loss_ce, last.loss_ql);
  m.outputs = {kCheckpointName, kVocabName, "loss.csv"};
  m.write(g.out);
}

void run_encode(const GlobalOptions& g, const EncodeOptions& o, const nlohmann::ordered_json& config) {
  RunManifest m("encode", config, g.seed);
  const Model model = load_model(o.model, m);
  require_file(o.corpus, "--corpus");
  m.inputs.push_back(o.corpus);
  const Corpus corpus = read_corpus(o.corpus);
  prepare_out(g);
  const MemoryStore store = build_store(corpus, model.vocab, model.ckpt.params, model.ckpt.config);
  store.save(g.out / "memstore.bin");
  spdlog::info("encode: {} documents, {} floats", store.size(), store.payload_floats());
  m.outputs = {"memstore.bin"};
  m.write(g.out);
}

void run_rerank(const GlobalOptions& g, const RerankOptions& o, const nlohmann::ordered_json& config) {
  RunManifest m("rerank", config, g.seed);
  const Model model = load_model(o.model, m);
  require_file(o.store, "--store");
  require_file(o.queries, "--queries");
  if (o.run.empty() == o.corpus.empty()) throw ConfigError("give exactly one of --run and --corpus");
  m.inputs.push_back(o.store);
  m.inputs.push_back(o.queries);

  const MemoryStore store = MemoryStore::load(o.store);
  check_store(store, model.ckpt.config);
  const QuerySet queries = read_queries(o.queries);
  RankingRun first_stage;
  if (!o.run.empty()) {
    require_file(o.run, "--run");
    m.inputs.push_back(o.run);
    first_stage = read_trec_run(o.run);
  } else {
    require_file(o.corpus, "--corpus");
    m.inputs.push_back(o.corpus);
    first_stage = retrieve_run(queries, InvertedIndex::build(read_corpus(o.corpus)), o.depth);
  }
  ScoreOptions so;
  so.kind = parse_score_kind(o.score);
  so.target_mode = parse_target_mode(o.target_mode);
  so.include_eos = o.include_eos;

  prepare_out(g);
  const RankingRun reranked =
      rerank(first_stage, queries, model.vocab, store, model.ckpt.params, model.ckpt.config, o.depth, so, g.threads);
  if (o.run.empty()) {
    write_trec_run(g.out / "bm25.trec", first_stage, "bm25");
    m.outputs.emplace_back("bm25.trec");
  }
  write_trec_run(g.out / "run.trec", reranked, "ed2lm");
  m.outputs.emplace_back("run.trec");
  spdlog::info("rerank: {} queries, depth {}", reranked.queries.size(), o.depth);
  m.write(g.out);
}

void run_eval(const GlobalOptions& g, const EvalOptions& o, const nlohmann::ordered_json& config) {
  require_file(o.run, "--run");
  require_file(o.qrels, "--qrels");
  RunManifest m("eval", config, g.seed);
  m.inputs = {o.run, o.qrels};
  const Qrels qrels = read_qrels(o.qrels);
  const auto evaluate = [&](const RankingRun& run) {
    return std::vector<EvalReport>{mrr_at_k(run, qrels, o.k, o.relevant_grade), ndcg_at_k(run, qrels, o.k),
                                   map_binary(run, qrels, o.map_grade), hits_at_k(run, qrels, o.k, o.relevant_grade),
                                   recall_at_k(run, qrels, o.k, o.relevant_grade)};
  };
  const auto reports = evaluate(read_trec_run(o.run));
  std::vector<EvalReport> baseline;
  if (!o.baseline.empty()) {
    require_file(o.baseline, "--baseline");
    m.inputs.push_back(o.baseline);
    baseline = evaluate(read_trec_run(o.baseline));
  }

  prepare_out(g);
  {
    auto f = open_out(g.out / "eval.tsv");
    for (const auto& r : reports) write_eval_report(f, r);
  }
  m.outputs.emplace_back("eval.tsv");
  for (const auto& r : reports) print_mean(r);
  if (!baseline.empty()) {
    auto f = open_out(g.out / "ttest.tsv");
    for (std::size_t i = 0; i < reports.size(); ++i) {
      f << reports[i].metric << '\t';
      write_ttest(f, paired_ttest(reports[i], baseline[i]));
    }
    m.outputs.emplace_back("ttest.tsv");
  }
  m.write(g.out);
}

void run_bench(const GlobalOptions& g, const BenchOptions& o, const nlohmann::ordered_json& config) {
  RunManifest m("bench", config, g.seed);
  std::optional<Model> model;
  ModelConfig mc;
  if (!o.model.empty()) {
    model = load_model(o.model, m);
    mc = model->ckpt.config;
  } else if (o.preset == "base") {
    mc.num_encoder_layers = 12;
    mc.num_decoder_layers = 12;
    mc.d_model = 768;
    mc.num_heads = 12;
    mc.d_ff = 3072;
    mc.vocab_size = 32128;
    mc.max_doc_len = 256;
    mc.max_query_len = 32;
    mc.funnel_blocks = o.funnel_blocks;
  } else if (o.preset == "tiny") {
    mc.funnel_blocks = o.funnel_blocks;
  } else {
    throw ConfigError("unknown --preset '" + o.preset + "' (tiny|base)");
  }
  mc.validate();

  std::vector<InferenceMode> modes;
  if (o.mode == "both") {
    modes = {InferenceMode::cross_attention, InferenceMode::decomposed};
  } else {
    modes = {parse_inference_mode(o.mode)};
  }

  std::vector<FlopsReport> flops;
  for (const auto mode : modes) flops.push_back(estimate_flops(mc, mode, o.doc_len, o.query_len));

  std::vector<LatencyReport> latency;
  if (o.latency) {
    if (!model) throw ConfigError("--latency needs --model");
    require_file(o.corpus, "--corpus");
    require_file(o.queries, "--queries");
    if (o.pairs == 0) throw ConfigError("--pairs must be positive");
    m.inputs.push_back(o.corpus);
    m.inputs.push_back(o.queries);
    const Corpus corpus = read_corpus(o.corpus);
    const QuerySet queries = read_queries(o.queries);
    if (corpus.docs.empty() || queries.empty()) throw InputError("latency needs at least one doc and one query");
    std::vector<LatencyPair> workload;
    auto q = queries.begin();
    auto d = corpus.docs.begin();
    for (std::size_t i = 0; i < o.pairs; ++i) {
      workload.push_back({q->second, d->first});
      if (++q == queries.end()) q = queries.begin();
      if (++d == corpus.docs.end()) d = corpus.docs.begin();
    }
    const MemoryStore store = build_store(corpus, model->vocab, model->ckpt.params, mc);
    for (const auto mode : modes) {
      const PairScorer scorer = mode == InferenceMode::cross_attention
                                    ? cross_attention_scorer(corpus.docs, model->vocab, model->ckpt.params, mc)
                                    : decomposed_scorer(store, model->vocab, model->ckpt.params, mc);
      latency.push_back(run_latency(workload, scorer, mode, o.repetitions));
      spdlog::info("bench: {} p50 {:.4f} ms p95 {:.4f} ms", to_string(mode), latency.back().p50_ms,
                   latency.back().p95_ms);
    }
  }

  prepare_out(g);
  {
    auto jsonl = open_out(g.out / "flops.jsonl");
    auto csv = open_out(g.out / "flops.csv");
    write_flops_csv_header(csv);
    for (const auto& r : flops) {
      write_flops_jsonl(jsonl, r);
      write_flops_csv(csv, r);
    }
  }
  m.outputs = {"flops.jsonl", "flops.csv"};
  for (const auto& r : flops) std::printf("flops\t%s\t%llu\n", to_string(r.mode).c_str(), (unsigned long long)r.total);
  if (flops.size() == 2) {
    std::printf("flops_ratio\t%.6f\n", double(flops[0].total) / double(flops[1].total));
  }
  if (!latency.empty()) {
    // Timings differ between runs, so these files are not part of the
    // reproducible digest set.
    auto jsonl = open_out(g.out / "latency.jsonl");
    auto csv = open_out(g.out / "latency.csv");
    write_latency_csv_header(csv);
    for (const auto& r : latency) {
      write_latency_jsonl(jsonl, r);
      write_latency_csv(csv, r);
      std::printf("latency_p95_ms\t%s\t%.6f\n", to_string(r.mode).c_str(), r.p95_ms);
    }
    if (latency.size() == 2) std::printf("latency_p95_ratio\t%.6f\n", latency[0].p95_ms / latency[1].p95_ms);
  }
  m.write(g.out);
}

void run_generate(const GlobalOptions& g, const GenerateOptions& o, const nlohmann::ordered_json& config) {
  RunManifest m("generate", config, g.seed);
  const Model model = load_model(o.model, m);
  if (o.store.empty() == o.corpus.empty()) throw ConfigError("give exactly one of --store and --corpus");
  MemoryStore store;
  if (!o.store.empty()) {
    require_file(o.store, "--store");
    m.inputs.push_back(o.store);
    store = MemoryStore::load(o.store);
    check_store(store, model.ckpt.config);
  } else {
    require_file(o.corpus, "--corpus");
    m.inputs.push_back(o.corpus);
    store = build_store(read_corpus(o.corpus), model.vocab, model.ckpt.params, model.ckpt.config);
  }
  GenerationConfig gen;
  gen.k = o.k;
  gen.num_samples = o.samples;
  gen.max_len = o.max_len;
  gen.temperature = o.temperature;
  gen.seed = g.seed;
  gen.checkpoint_mode = parse_target_mode(o.checkpoint_mode);
  gen.validate(model.ckpt.config);

  prepare_out(g);
  const auto generated = generate_for_store(store, model.ckpt.params, model.ckpt.config, gen, model.vocab, g.threads);
  {
    auto f = open_out(g.out / "generated.tsv");
    write_generated(f, generated);
  }
  spdlog::info("generate: {} documents, {} samples each", generated.size(), gen.num_samples);
  m.outputs = {"generated.tsv"};
  m.write(g.out);
}

void run_expand(const GlobalOptions& g, const ExpandOptions& o, const nlohmann::ordered_json& config) {
  require_file(o.corpus, "--corpus");
  require_file(o.generated, "--generated");
  RunManifest m("expand", config, g.seed);
  m.inputs = {o.corpus, o.generated};
  const Corpus expanded = expand_corpus(read_corpus(o.corpus), read_generated(o.generated), o.n);
  prepare_out(g);
  {
    auto f = open_out(g.out / DatasetFiles::corpus);
    write_corpus(f, expanded);
  }
  m.outputs = {DatasetFiles::corpus};
  m.write(g.out);
}

}  // namespace ed2lm::cli
