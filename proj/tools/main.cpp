#include "commands.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <string_view>

using namespace ed2lm;
using namespace ed2lm::cli;

namespace {

// A number when the whole string parses as one, else the string itself.
nlohmann::ordered_json typed(const std::string& s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec == std::errc{} && end == s.data() + s.size() && !s.empty()) {
    std::int64_t i = 0;
    const auto [iend, iec] = std::from_chars(s.data(), s.data() + s.size(), i);
    if (iec == std::errc{} && iend == s.data() + s.size()) return i;
    return v;
  }
  return s;
}

// Effective value of every option: flag, config file or default, in that order
// of precedence (CLI11 resolves the first two).
void echo_options(const CLI::App& app, nlohmann::ordered_json& out) {
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "version") continue;
    if (opt->get_expected_max() == 0) {
      out[name] = opt->count() > 0 && opt->as<bool>();
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      out[name] = r.size() == 1 ? typed(r.front()) : nlohmann::ordered_json(r);
    } else {
      out[name] = typed(opt->get_default_str());
    }
  }
}

int exit_code(std::string_view kind) {
  static const std::map<std::string_view, int> codes{
      {"usage_error", 2},   {"config_error", 3},          {"input_error", 4},  {"numeric_error", 5},
      {"lookup_error", 6},  {"incompatible_artifact", 7}, {"shape_error", 8},  {"output_exists", 9},
  };
  const auto it = codes.find(kind);
  return it == codes.end() ? 1 : it->second;
}

int fail(std::string_view kind, std::string_view command, std::string_view message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["command"] = command;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
  return exit_code(kind);
}

void add_arch_options(CLI::App* sub, ArchOptions& a) {
  sub->add_option("--encoder-layers", a.encoder_layers, "Encoder layers");
  sub->add_option("--decoder-layers", a.decoder_layers, "Decoder layers");
  sub->add_option("--d-model", a.d_model, "Hidden width");
  sub->add_option("--heads", a.heads, "Attention heads");
  sub->add_option("--d-ff", a.d_ff, "Feed-forward width");
  sub->add_option("--max-doc-len", a.max_doc_len, "Document tokens kept");
  sub->add_option("--max-query-len", a.max_query_len, "Query tokens kept");
  sub->add_option("--funnel-blocks", a.funnel_blocks, "Encoder pooling blocks (2^b compression)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ed2lm: encoder-decoder reranking with a precomputed document memory store", "ed2lm"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file; flags override it, it overrides defaults");
  app.set_version_flag("--version", ED2LM_VERSION);

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads for rerank and generate")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--force", g.force, "Write into a non-empty output directory");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|critical|off")
      ->envname("ED2LM_LOG_LEVEL")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "critical", "off"}));

  std::map<const CLI::App*, std::function<void(const nlohmann::ordered_json&)>> actions;

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus, queries, qrels and training pairs");
  s->add_option("--docs", synth.docs, "Documents");
  s->add_option("--queries", synth.queries, "Evaluation queries");
  s->add_option("--train-queries", synth.train_queries, "Training queries");
  s->add_option("--vocab", synth.vocab, "Distinct words");
  s->add_option("--noise", synth.noise, "Per-word query replacement rate");
  actions[s] = [&](const auto& c) { run_synth(g, synth, c); };

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train a model on query/doc pairs");
  t->add_option("--data", train.data, "Directory written by synth (supplies the three inputs below)");
  t->add_option("--corpus", train.corpus, "Corpus TSV");
  t->add_option("--train-queries", train.train_queries, "Training query TSV");
  t->add_option("--pairs", train.pairs, "query_id, doc_id, label TSV");
  t->add_option("--init", train.init, "Model directory to continue from");
  add_arch_options(t, train.arch);
  t->add_option("--vocab-cap", train.vocab_cap, "Largest vocabulary built from the corpus");
  t->add_option("--steps", train.steps, "Optimizer steps");
  t->add_option("--batch-size", train.batch_size, "Examples per step");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--optimizer", train.optimizer, "sgd|adam")->check(CLI::IsMember({"sgd", "adam"}));
  t->add_option("--loss", train.loss, "combined|ce_only|ql_only")
      ->check(CLI::IsMember({"combined", "ce_only", "ql_only"}));
  t->add_option("--target-mode", train.target_mode, "ranking|generation")
      ->check(CLI::IsMember({"ranking", "generation"}));
  actions[t] = [&](const auto& c) { run_train(g, train, c); };

  EncodeOptions encode;
  auto* e = app.add_subcommand("encode", "Encode a corpus into a memory store");
  e->add_option("--model", encode.model, "Model directory written by train");
  e->add_option("--corpus", encode.corpus, "Corpus TSV");
  actions[e] = [&](const auto& c) { run_encode(g, encode, c); };

  RerankOptions rr;
  auto* r = app.add_subcommand("rerank", "Rescore a first-stage run with the decoder against the memory store");
  r->add_option("--model", rr.model, "Model directory");
  r->add_option("--store", rr.store, "Memory store written by encode");
  r->add_option("--queries", rr.queries, "Query TSV");
  r->add_option("--run", rr.run, "TREC run to rerank");
  r->add_option("--corpus", rr.corpus, "Corpus TSV for a BM25 first stage instead of --run");
  r->add_option("--depth", rr.depth, "Candidates rescored per query");
  r->add_option("--score", rr.score, "true_false|query_likelihood")
      ->check(CLI::IsMember({"true_false", "query_likelihood"}));
  r->add_option("--target-mode", rr.target_mode, "Layout the model was trained with: ranking|generation")
      ->check(CLI::IsMember({"ranking", "generation"}));
  r->add_flag("--include-eos", rr.include_eos, "Multiply class probabilities by P(eos | class)");
  actions[r] = [&](const auto& c) { run_rerank(g, rr, c); };

  EvalOptions ev;
  auto* v = app.add_subcommand("eval", "Score a TREC run against qrels");
  v->add_option("--run", ev.run, "TREC run");
  v->add_option("--qrels", ev.qrels, "Qrels file");
  v->add_option("--baseline", ev.baseline, "Second run for a paired t-test");
  v->add_option("--k", ev.k, "Cutoff for MRR, nDCG, hits and recall")->check(CLI::PositiveNumber);
  v->add_option("--relevant-grade", ev.relevant_grade, "Lowest relevant grade for MRR, hits and recall");
  v->add_option("--map-grade", ev.map_grade, "Lowest relevant grade for MAP");
  actions[v] = [&](const auto& c) { run_eval(g, ev, c); };

  BenchOptions bench;
  auto* b = app.add_subcommand("bench", "FLOPs estimates and latency of both inference paths");
  b->add_option("--mode", bench.mode, "cross_attention|decomposed|both")
      ->check(CLI::IsMember({"cross_attention", "decomposed", "both"}));
  b->add_option("--preset", bench.preset, "Architecture when no --model is given: tiny|base");
  b->add_option("--model", bench.model, "Model directory (its architecture overrides --preset)");
  b->add_option("--funnel-blocks", bench.funnel_blocks, "Funnel blocks for the preset");
  b->add_option("--doc-len", bench.doc_len, "Document tokens for the FLOPs estimate");
  b->add_option("--query-len", bench.query_len, "Query tokens for the FLOPs estimate");
  b->add_flag("--latency", bench.latency, "Also time both paths (needs --model, --corpus, --queries)");
  b->add_option("--corpus", bench.corpus, "Corpus TSV for the latency workload");
  b->add_option("--queries", bench.queries, "Query TSV for the latency workload");
  b->add_option("--pairs", bench.pairs, "Query/doc pairs in the workload");
  b->add_option("--repetitions", bench.repetitions, "Timed calls per pair; the minimum is kept")
      ->check(CLI::PositiveNumber);
  actions[b] = [&](const auto& c) { run_bench(g, bench, c); };

  GenerateOptions gen;
  auto* gn = app.add_subcommand("generate", "Sample questions for every stored document");
  gn->add_option("--model", gen.model, "Model directory");
  gn->add_option("--store", gen.store, "Memory store");
  gn->add_option("--corpus", gen.corpus, "Corpus TSV, encoded on the fly instead of --store");
  gn->add_option("--k", gen.k, "Top-k sampling cutoff")->check(CLI::PositiveNumber);
  gn->add_option("--samples", gen.samples, "Questions per document")->check(CLI::PositiveNumber);
  gn->add_option("--max-len", gen.max_len, "Token limit per question (0: model max_query_len)");
  gn->add_option("--temperature", gen.temperature, "Softmax temperature");
  gn->add_option("--checkpoint-mode", gen.checkpoint_mode, "Layout the model was trained with: generation|ranking")
      ->check(CLI::IsMember({"ranking", "generation"}));
  actions[gn] = [&](const auto& c) { run_generate(g, gen, c); };

  ExpandOptions ex;
  auto* x = app.add_subcommand("expand", "Append generated questions to their documents");
  x->add_option("--corpus", ex.corpus, "Corpus TSV");
  x->add_option("--generated", ex.generated, "generated.tsv written by generate");
  x->add_option("--n", ex.n, "Questions appended per document");
  actions[x] = [&](const auto& c) { run_expand(g, ex, c); };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    const auto subs = app.get_subcommands();
    return fail("usage_error", subs.empty() ? "" : subs.front()->get_name(), err.what());
  }

  spdlog::set_default_logger(spdlog::stderr_color_st("ed2lm"));
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  const CLI::App* sub = app.get_subcommands().front();
  try {
    nlohmann::ordered_json config;
    echo_options(app, config);
    echo_options(*sub, config);
    actions.at(sub)(config);
  } catch (const Error& err) {
    return fail(err.kind(), sub->get_name(), err.what());
  } catch (const std::exception& err) {
    return fail("internal_error", sub->get_name(), err.what());
  }
  return 0;
}
