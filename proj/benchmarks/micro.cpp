#include "ed2lm/bench.hpp"
#include "ed2lm/generation.hpp"
#include "ed2lm/memstore.hpp"
#include "ed2lm/metrics.hpp"
#include "ed2lm/model.hpp"
#include "ed2lm/retrieval.hpp"
#include "ed2lm/synth.hpp"
#include "ed2lm/training.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace ed2lm;

namespace {

ModelConfig toy_config(std::uint32_t funnel_blocks = 0) {
  ModelConfig c;
  c.num_encoder_layers = 2;
  c.num_decoder_layers = 2;
  c.d_model = 64;
  c.num_heads = 4;
  c.d_ff = 256;
  c.vocab_size = 2000;
  c.max_doc_len = 256;
  c.max_query_len = 32;
  c.funnel_blocks = funnel_blocks;
  c.seed = 1;
  return c;
}

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t n, std::uint32_t vocab) {
  std::uniform_int_distribution<TokenId> pick(kNumSpecialTokens, vocab - 1);
  std::vector<TokenId> ids(n);
  for (auto& id : ids) id = pick(rng);
  return TokenSequence(std::move(ids));
}

void BM_EncoderForward(benchmark::State& state) {
  const ModelConfig c = toy_config(static_cast<std::uint32_t>(state.range(1)));
  const auto params = Parameters<float>::initialize(c);
  std::mt19937_64 rng(1);
  const TokenSequence doc = random_sequence(rng, static_cast<std::size_t>(state.range(0)), c.vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(encoder_forward<float>(doc, params, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Args({64, 0})->Args({256, 0})->Args({256, 1});

// Decoder-only scoring against a resident memory of doc_len / 2^b rows.
void BM_ScoreAgainstMemory(benchmark::State& state) {
  const ModelConfig c = toy_config(static_cast<std::uint32_t>(state.range(1)));
  const auto params = Parameters<float>::initialize(c);
  std::mt19937_64 rng(2);
  const auto memory = encoder_forward<float>(random_sequence(rng, 256, c.vocab_size), params, c);
  const TokenSequence query = random_sequence(rng, static_cast<std::size_t>(state.range(0)), c.vocab_size);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_against_memory<float>(query, memory.matrix, memory.rows_valid, params, c));
  }
}
BENCHMARK(BM_ScoreAgainstMemory)->Args({8, 0})->Args({32, 0})->Args({32, 2});

void BM_CrossAttentionForward(benchmark::State& state) {
  const ModelConfig c = toy_config();
  const auto params = Parameters<float>::initialize(c);
  std::mt19937_64 rng(3);
  const TokenSequence doc = random_sequence(rng, 256, c.vocab_size);
  const TokenSequence query = random_sequence(rng, static_cast<std::size_t>(state.range(0)), c.vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(cross_attention_forward<float>(doc, query, params, c));
}
BENCHMARK(BM_CrossAttentionForward)->Arg(8)->Arg(32);

void BM_TrainingStep(benchmark::State& state) {
  ModelConfig c = toy_config();
  c.max_doc_len = 128;
  c.max_query_len = 8;
  const auto params = Parameters<float>::initialize(c);
  std::mt19937_64 rng(4);
  TrainingExample ex{random_sequence(rng, 96, c.vocab_size), random_sequence(rng, 6, c.vocab_size), 1};
  auto grad = Parameters<float>::zeros(c);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        loss_and_gradient<float>(ex, params, c, LossMode::combined, TargetMode::ranking, &grad, 1.0f));
  }
}
BENCHMARK(BM_TrainingStep);

void BM_Bm25Retrieve(benchmark::State& state) {
  SynthConfig sc;
  sc.num_docs = static_cast<std::size_t>(state.range(0));
  sc.num_train_queries = 0;
  const auto data = synthesize(sc);
  const InvertedIndex index = InvertedIndex::build(data.corpus);
  const auto terms = split_words(data.queries.begin()->second);
  for (auto _ : state) benchmark::DoNotOptimize(retrieve(terms, index, 50));
}
BENCHMARK(BM_Bm25Retrieve)->Arg(500)->Arg(5000);

void BM_TopkSample(benchmark::State& state) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> normal;
  std::vector<float> logits(32128);
  for (auto& l : logits) l = normal(rng);
  const auto k = static_cast<std::uint32_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(topk_sample(logits, k, 1.0, rng));
}
BENCHMARK(BM_TopkSample)->Arg(1)->Arg(10)->Arg(100);

void BM_MrrAt10(benchmark::State& state) {
  std::mt19937_64 rng(6);
  RankingRun run;
  Qrels qrels;
  for (int q = 0; q < 1000; ++q) {
    const std::string qid = "q" + std::to_string(q);
    auto& docs = run.queries[qid];
    for (int d = 0; d < 100; ++d) docs.push_back({"d" + std::to_string(d), 100.0 - d});
    qrels[qid]["d" + std::to_string(rng() % 100)] = 1;
  }
  for (auto _ : state) benchmark::DoNotOptimize(mrr_at_k(run, qrels, 10));
}
BENCHMARK(BM_MrrAt10);

void BM_EstimateFlops(benchmark::State& state) {
  ModelConfig c = toy_config();
  c.num_encoder_layers = c.num_decoder_layers = 12;
  c.d_model = 768;
  c.num_heads = 12;
  c.d_ff = 3072;
  c.vocab_size = 32128;
  for (auto _ : state) {
    benchmark::DoNotOptimize(estimate_flops(c, InferenceMode::cross_attention, 256, 32));
    benchmark::DoNotOptimize(estimate_flops(c, InferenceMode::decomposed, 256, 32));
  }
}
BENCHMARK(BM_EstimateFlops);

}  // namespace

BENCHMARK_MAIN();
