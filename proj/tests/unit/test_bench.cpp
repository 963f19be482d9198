#include "ed2lm/bench.hpp"
#include "ed2lm/error.hpp"
#include "ed2lm/memstore.hpp"
#include "ed2lm/retrieval.hpp"
#include "flops_oracle.hpp"
#include "helpers.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace ed2lm;

namespace {

ModelConfig random_config(std::mt19937_64& rng) {
  ModelConfig c;
  c.num_heads = 1 + rng() % 4;
  c.d_model = c.num_heads * (1 + rng() % 32);
  c.d_ff = 1 + rng() % 256;
  c.num_encoder_layers = 1 + rng() % 6;
  c.num_decoder_layers = 1 + rng() % 6;
  c.vocab_size = 6 + rng() % 5000;
  c.max_doc_len = 1 + rng() % 512;
  c.max_query_len = 1 + rng() % 64;
  const std::uint32_t blocks[] = {0, 1, 2, 3};
  c.funnel_blocks = blocks[rng() % 4];
  while (c.funnel_blocks > 0 && c.num_encoder_layers % c.funnel_blocks != 0) --c.funnel_blocks;
  return c;
}

std::uint64_t sum(const FlopsReport& r) {
  return r.embeddings + r.attention + r.cross_attention + r.feed_forward + r.projections;
}

}  // namespace

TEST(Flops, MatchesOperationTally) {
  std::mt19937_64 rng(40);
  for (int trial = 0; trial < 200; ++trial) {
    const ModelConfig c = random_config(rng);
    const std::size_t doc = 1 + rng() % c.max_doc_len;
    const std::size_t query = rng() % (c.max_query_len + 1);
    const auto cross = estimate_flops(c, InferenceMode::cross_attention, doc, query);
    const auto dec = estimate_flops(c, InferenceMode::decomposed, doc, query);
    const auto cross_oracle = oracle::cross_mode(c, doc, query);
    const auto dec_oracle = oracle::decomposed_mode(c, doc, query);
    EXPECT_EQ(static_cast<double>(cross.total), cross_oracle.total);
    EXPECT_EQ(static_cast<double>(dec.total), dec_oracle.total);
    EXPECT_EQ(static_cast<double>(dec.cross_attention), dec_oracle.cross_memory);
    EXPECT_EQ(cross.total, sum(cross));
    EXPECT_EQ(dec.total, sum(dec));
    for (const auto& r : {cross, dec}) {
      EXPECT_GT(r.embeddings, 0u);
      EXPECT_GT(r.attention, 0u);
      EXPECT_GT(r.cross_attention, 0u);
      EXPECT_GT(r.feed_forward, 0u);
      EXPECT_GT(r.projections, 0u);
    }
  }
}

TEST(Flops, BaseLikeRatio) {
  const ModelConfig c = oracle::base_like_config();
  const auto cross = estimate_flops(c, InferenceMode::cross_attention, 256, 32);
  const auto dec = estimate_flops(c, InferenceMode::decomposed, 256, 32);
  const double ratio = double(cross.total) / double(dec.total);
  EXPECT_GE(ratio, 2.6);
  EXPECT_LE(ratio, 3.8);
  EXPECT_NEAR(ratio, oracle::cross_mode(c, 256, 32).total / oracle::decomposed_mode(c, 256, 32).total, 1e-12);
}

TEST(Flops, DocLengthOnlyMovesCrossAttentionWhenDecomposed) {
  ModelConfig c = oracle::base_like_config();
  const auto a = estimate_flops(c, InferenceMode::decomposed, 100, 20);
  const auto b = estimate_flops(c, InferenceMode::decomposed, 200, 20);
  EXPECT_EQ(a.attention, b.attention);
  EXPECT_EQ(a.feed_forward, b.feed_forward);
  EXPECT_EQ(a.projections, b.projections);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(b.cross_attention, 2 * a.cross_attention);
}

TEST(Flops, FunnelShrinksMemoryCostFourfold) {
  ModelConfig c = oracle::base_like_config();
  const auto b0 = estimate_flops(c, InferenceMode::decomposed, 256, 32);
  c.funnel_blocks = 2;
  const auto b2 = estimate_flops(c, InferenceMode::decomposed, 256, 32);
  EXPECT_EQ(b0.cross_attention, 4 * b2.cross_attention);
  EXPECT_EQ(b0.attention, b2.attention);
  EXPECT_EQ(b0.feed_forward, b2.feed_forward);
  EXPECT_EQ(b0.projections, b2.projections);
  c.funnel_blocks = 3;
  EXPECT_EQ(b0.cross_attention, 8 * estimate_flops(c, InferenceMode::decomposed, 256, 32).cross_attention);
}

TEST(Flops, MonotoneInEveryParameter) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c = random_config(rng);
    c.funnel_blocks = 0;
    c.max_doc_len += 1;
    c.max_query_len += 1;
    const std::size_t doc = 1 + rng() % (c.max_doc_len - 1);
    const std::size_t query = rng() % c.max_query_len;
    for (InferenceMode mode : {InferenceMode::cross_attention, InferenceMode::decomposed}) {
      const auto base = estimate_flops(c, mode, doc, query).total;
      EXPECT_GE(estimate_flops(c, mode, doc + 1, query).total, base);
      EXPECT_GE(estimate_flops(c, mode, doc, query + 1).total, base);
      auto grow = [&](auto field) {
        ModelConfig g = c;
        field(g);
        return estimate_flops(g, mode, doc, query).total;
      };
      EXPECT_GE(grow([](ModelConfig& g) { g.num_encoder_layers += 1; }), base);
      EXPECT_GE(grow([](ModelConfig& g) { g.num_decoder_layers += 1; }), base);
      EXPECT_GE(grow([](ModelConfig& g) { g.d_ff += 1; }), base);
      EXPECT_GE(grow([](ModelConfig& g) { g.vocab_size += 1; }), base);
      EXPECT_GE(grow([](ModelConfig& g) { g.d_model += g.num_heads; }), base);
    }
  }
}

// The decoder projects all query_len + 2 positions onto the vocabulary, so the
// ordering needs the vocabulary cost to stay below the layer stack's. A
// one-token document is cheaper to encode than the two decoder positions.
TEST(Flops, DecomposedCheaperWhenQueryShorter) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    ModelConfig c = random_config(rng);
    c.num_decoder_layers = c.num_encoder_layers;
    c.vocab_size = std::max<std::uint32_t>(6, std::min(c.vocab_size, c.num_decoder_layers * c.d_ff));
    c.max_doc_len = std::max<std::uint32_t>(c.max_doc_len, 2);
    const std::size_t doc = 2 + rng() % (c.max_doc_len - 1);
    const std::size_t query = rng() % (std::min<std::size_t>(doc, c.max_query_len + 1));
    EXPECT_LT(estimate_flops(c, InferenceMode::decomposed, doc, query).total,
              estimate_flops(c, InferenceMode::cross_attention, doc, query).total);
  }
}

TEST(Flops, HugeVocabularyCanInvertOrdering) {
  ModelConfig c = testing_util::tiny_config();
  c.vocab_size = 50000;
  EXPECT_GT(estimate_flops(c, InferenceMode::decomposed, 6, 5).total,
            estimate_flops(c, InferenceMode::cross_attention, 6, 5).total);
}

TEST(Flops, RejectsOutOfRangeLengths) {
  const ModelConfig c = testing_util::tiny_config();
  EXPECT_THROW(estimate_flops(c, InferenceMode::decomposed, 0, 1), InputError);
  EXPECT_THROW(estimate_flops(c, InferenceMode::decomposed, c.max_doc_len + 1, 1), InputError);
  EXPECT_THROW(estimate_flops(c, InferenceMode::decomposed, 1, c.max_query_len + 1), InputError);
}

TEST(Percentile, NearestRank) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(nearest_rank_percentile(v, 0.95), 95.0);
  EXPECT_EQ(nearest_rank_percentile(v, 0.50), 50.0);
  EXPECT_EQ(nearest_rank_percentile(v, 1.0), 100.0);
  EXPECT_EQ(nearest_rank_percentile({7.0}, 0.95), 7.0);
  EXPECT_THROW(nearest_rank_percentile({}, 0.5), InputError);
  EXPECT_THROW(nearest_rank_percentile({1.0}, 0.0), InputError);

  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> sample(1 + rng() % 300);
    for (auto& x : sample) x = std::uniform_real_distribution<double>(0, 10)(rng);
    const int percent = 1 + static_cast<int>(rng() % 100);
    auto sorted = sample;
    std::sort(sorted.begin(), sorted.end());
    // Smallest rank r with r * 100 >= percent * n, in integers.
    std::size_t r = 1;
    while (r * 100 < static_cast<std::size_t>(percent) * sample.size()) ++r;
    EXPECT_EQ(nearest_rank_percentile(sample, percent / 100.0), sorted[r - 1]);
  }
}

TEST(Latency, ConstantTimer) {
  double now = 0.0;
  const Clock fake = [&now] { return now += 5.0; };
  const std::vector<LatencyPair> workload{{"a", "d1"}, {"b", "d2"}, {"c", "d3"}};
  const auto r = run_latency(workload, [](const LatencyPair&) { return 0.0; }, InferenceMode::decomposed, 10, fake);
  EXPECT_EQ(r.p50_ms, 5.0);
  EXPECT_EQ(r.p95_ms, 5.0);
  EXPECT_EQ(r.minima_ms, std::vector<double>(3, 5.0));
  EXPECT_EQ(r.pairs, 3u);
  EXPECT_EQ(r.repetitions, 10u);
  EXPECT_EQ(r.warmup_discarded, 1u);
}

TEST(Latency, ProtocolOrderAndMinima) {
  std::vector<std::string> calls;
  double now = 0.0;
  double next_cost = 0.0;
  const Clock fake = [&] { return now; };
  std::mt19937_64 rng(44);
  const PairScorer scorer = [&](const LatencyPair& p) {
    calls.push_back(p.doc_id);
    now += next_cost;
    next_cost = 1.0 + static_cast<double>(rng() % 100);
    return 0.5;
  };
  std::vector<LatencyPair> workload;
  for (int i = 0; i < 7; ++i) workload.push_back({"q", "d" + std::to_string(i)});
  // A clock that never moves on its own: the resolution probe sees zero.
  const auto r = run_latency(workload, scorer, InferenceMode::cross_attention, 4, fake);
  ASSERT_EQ(calls.size(), 1 + 7 * 4u);
  EXPECT_EQ(calls.front(), "d0");
  for (int i = 0; i < 7; ++i) {
    for (int rep = 0; rep < 4; ++rep) EXPECT_EQ(calls[1 + i * 4 + rep], "d" + std::to_string(i));
  }
  EXPECT_LE(r.p50_ms, r.p95_ms);
  for (double m : r.minima_ms) {
    EXPECT_GE(m, 1.0);
    EXPECT_LE(m, 100.0);
  }
  EXPECT_EQ(r.p95_ms, nearest_rank_percentile(r.minima_ms, 0.95));
  EXPECT_THROW(run_latency({}, scorer, InferenceMode::decomposed), InputError);
  EXPECT_THROW(run_latency(workload, scorer, InferenceMode::decomposed, 0), InputError);
}

TEST(Latency, RealScorersOnTinyModel) {
  std::vector<std::string> words;
  for (int i = 0; i < 18; ++i) words.push_back("w" + std::to_string(i));
  const Vocabulary vocab = Vocabulary::from_words(words);
  const ModelConfig c = testing_util::tiny_config(1);
  const auto params = Parameters<float>::initialize(c);
  std::map<std::string, std::string> docs{{"a", "w1 w2 w3 w4 w5"}, {"b", "w6 w7 w8"}};
  Corpus corpus;
  corpus.docs = docs;
  const MemoryStore store = build_store(corpus, vocab, params, c);
  const std::vector<LatencyPair> workload{{"w1 w3", "a"}, {"w7", "b"}};
  const auto cross = cross_attention_scorer(docs, vocab, params, c);
  const auto dec = decomposed_scorer(store, vocab, params, c);
  for (const auto& p : workload) {
    EXPECT_GT(cross(p), 0.0);
    EXPECT_LT(cross(p), 1.0);
    EXPECT_GT(dec(p), 0.0);
  }
  EXPECT_THROW(cross({"w1", "zzz"}), LookupError);
  const auto r = run_latency(workload, dec, InferenceMode::decomposed, 3);
  EXPECT_EQ(r.minima_ms.size(), 2u);
  EXPECT_GT(r.p95_ms, 0.0);
}

TEST(BenchOutput, JsonlAndCsv) {
  const ModelConfig c = oracle::base_like_config();
  const auto f = estimate_flops(c, InferenceMode::decomposed, 256, 32);
  std::ostringstream jl;
  write_flops_jsonl(jl, f);
  EXPECT_NE(jl.str().find("\"mode\":\"decomposed\""), std::string::npos);
  EXPECT_NE(jl.str().find("\"total\":" + std::to_string(f.total)), std::string::npos);
  EXPECT_EQ(jl.str().back(), '\n');
  std::ostringstream csv;
  write_flops_csv_header(csv);
  write_flops_csv(csv, f);
  EXPECT_NE(csv.str().find("decomposed,256,32,"), std::string::npos);

  LatencyReport lr;
  lr.minima_ms = {1.5, 2.5};
  lr.p50_ms = 1.5;
  lr.p95_ms = 2.5;
  lr.pairs = 2;
  lr.repetitions = 10;
  lr.warmup_discarded = 1;
  std::ostringstream lj;
  write_latency_jsonl(lj, lr);
  EXPECT_NE(lj.str().find("\"p95_ms\":2.5"), std::string::npos);
  EXPECT_NE(lj.str().find("\"minima_ms\":[1.5,2.5]"), std::string::npos);
  EXPECT_EQ(parse_inference_mode("cross_attention"), InferenceMode::cross_attention);
  EXPECT_THROW(parse_inference_mode("both"), ConfigError);
}
