#include "ed2lm/bench.hpp"

#include "ed2lm/error.hpp"
#include "ed2lm/model.hpp"
#include "ed2lm/retrieval.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace ed2lm {

std::string to_string(InferenceMode mode) {
  return mode == InferenceMode::cross_attention ? "cross_attention" : "decomposed";
}

InferenceMode parse_inference_mode(const std::string& name) {
  if (name == "cross_attention") return InferenceMode::cross_attention;
  if (name == "decomposed") return InferenceMode::decomposed;
  throw ConfigError("unknown inference mode '" + name + "' (expected cross_attention or decomposed)");
}

namespace {

using u64 = std::uint64_t;

struct Costs {
  u64 d, d_ff, vocab;

  u64 norm(u64 s) const { return 5 * s * d; }
  // Q, K, V, O projections + scores + weighted sum + softmax + pre-norm.
  u64 self_attention(u64 s) const { return 2 * 4 * s * d * d + 2 * 2 * s * s * d + 3 * s * s + norm(s); }
  u64 ffn(u64 s) const { return 2 * 2 * s * d * d_ff + norm(s); }
  // Everything in cross-attention that scales with the memory length.
  u64 cross_memory(u64 s, u64 m) const { return 2 * 2 * m * d * d + 2 * 2 * s * m * d + 3 * s * m; }
  // Query and output projections plus the pre-norm.
  u64 cross_local(u64 s) const { return 2 * 2 * s * d * d + norm(s); }
  u64 vocab_projection(u64 s) const { return 2 * s * d * vocab; }
};

void add_decoder(FlopsReport& r, const Costs& c, u64 layers, u64 s, u64 memory) {
  r.embeddings += s * c.d;
  r.attention += layers * c.self_attention(s);
  r.cross_attention += layers * c.cross_memory(s, memory);
  r.projections += layers * c.cross_local(s) + c.norm(s) + c.vocab_projection(s);
  r.feed_forward += layers * c.ffn(s);
}

}  // namespace

FlopsReport estimate_flops(const ModelConfig& config, InferenceMode mode, std::size_t doc_len, std::size_t query_len) {
  config.validate();
  if (doc_len == 0 || doc_len > config.max_doc_len) throw InputError("doc_len must lie in [1, max_doc_len]");
  if (query_len > config.max_query_len) throw InputError("query_len exceeds max_query_len");
  const Costs c{config.d_model, config.d_ff, config.vocab_size};
  FlopsReport r;
  r.mode = mode;
  r.doc_len = doc_len;
  r.query_len = query_len;
  if (mode == InferenceMode::cross_attention) {
    const u64 s = doc_len + query_len;
    r.embeddings += s * c.d;
    r.attention += config.num_encoder_layers * c.self_attention(s);
    r.feed_forward += config.num_encoder_layers * c.ffn(s);
    r.projections += c.norm(s);
    add_decoder(r, c, config.num_decoder_layers, 1, s);
  } else {
    add_decoder(r, c, config.num_decoder_layers, query_len + 2, pooled_length(doc_len, config.funnel_blocks));
  }
  r.total = r.embeddings + r.attention + r.cross_attention + r.feed_forward + r.projections;
  return r;
}

double nearest_rank_percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("percentile of an empty sample");
  if (!(p > 0.0 && p <= 1.0)) throw InputError("percentile must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  // p * n in floating point can land a hair above an integer (0.95 * 100).
  const double rank = std::ceil(p * static_cast<double>(values.size()) - 1e-9);
  const std::size_t index = std::clamp<std::size_t>(static_cast<std::size_t>(rank), 1, values.size());
  return values[index - 1];
}

double steady_clock_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

double clock_resolution_ms(const Clock& clock) {
  double best = 0.0;
  for (int probe = 0; probe < 5; ++probe) {
    const double start = clock();
    double now = start;
    for (int spin = 0; spin < 1000000 && now == start; ++spin) now = clock();
    const double step = now - start;
    if (step > 0.0 && (best == 0.0 || step < best)) best = step;
  }
  return best;
}

LatencyReport run_latency(std::span<const LatencyPair> workload, const PairScorer& scorer, InferenceMode mode,
                          std::size_t repetitions, const Clock& clock) {
  if (workload.empty()) throw InputError("latency workload is empty");
  if (repetitions == 0) throw InputError("latency needs at least one repetition");
  const double resolution = clock_resolution_ms(clock);
  if (resolution > 1e-3) spdlog::warn("timer resolution {} ms is coarser than 1 microsecond", resolution);

  LatencyReport r;
  r.mode = mode;
  r.pairs = workload.size();
  r.repetitions = repetitions;
  volatile double sink = scorer(workload.front());
  r.warmup_discarded = 1;
  r.minima_ms.reserve(workload.size());
  for (const auto& pair : workload) {
    double best = 0.0;
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
      const double start = clock();
      sink = scorer(pair);
      const double elapsed = clock() - start;
      if (rep == 0 || elapsed < best) best = elapsed;
    }
    r.minima_ms.push_back(best);
  }
  (void)sink;
  r.p50_ms = nearest_rank_percentile(r.minima_ms, 0.50);
  r.p95_ms = nearest_rank_percentile(r.minima_ms, 0.95);
  return r;
}

PairScorer cross_attention_scorer(const std::map<std::string, std::string>& docs, const Vocabulary& vocab,
                                  const Parameters<float>& params, const ModelConfig& config) {
  return [&docs, &vocab, &params, config](const LatencyPair& pair) {
    const auto it = docs.find(pair.doc_id);
    if (it == docs.end()) throw LookupError("doc " + pair.doc_id + " not in corpus");
    const TokenSequence doc = tokenize(it->second, vocab, config.max_doc_len);
    const TokenSequence query = tokenize(pair.query, vocab, config.max_query_len);
    const Matrix<float> logits = cross_attention_forward<float>(doc, query, params, config);
    return two_way_score(logits(0, kTrueId), logits(0, kFalseId));
  };
}

PairScorer decomposed_scorer(const MemoryStore& store, const Vocabulary& vocab, const Parameters<float>& params,
                             const ModelConfig& config, const ScoreOptions& options) {
  return [&store, &vocab, &params, config, options](const LatencyPair& pair) {
    const TokenSequence query = tokenize(pair.query, vocab, config.max_query_len);
    return score_pair(query, pair.doc_id, store, params, config, options).score;
  };
}

void write_flops_jsonl(std::ostream& out, const FlopsReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = "flops";
  j["mode"] = to_string(r.mode);
  j["doc_len"] = r.doc_len;
  j["query_len"] = r.query_len;
  j["components"] = {{"embeddings", r.embeddings},
                     {"attention", r.attention},
                     {"cross_attention", r.cross_attention},
                     {"feed_forward", r.feed_forward},
                     {"projections", r.projections}};
  j["total"] = r.total;
  out << j.dump() << '\n';
}

void write_flops_csv_header(std::ostream& out) {
  out << "mode,doc_len,query_len,embeddings,attention,cross_attention,feed_forward,projections,total\n";
}

void write_flops_csv(std::ostream& out, const FlopsReport& r) {
  out << to_string(r.mode) << ',' << r.doc_len << ',' << r.query_len << ',' << r.embeddings << ',' << r.attention
      << ',' << r.cross_attention << ',' << r.feed_forward << ',' << r.projections << ',' << r.total << '\n';
}

void write_latency_jsonl(std::ostream& out, const LatencyReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = "latency";
  j["mode"] = to_string(r.mode);
  j["pairs"] = r.pairs;
  j["repetitions"] = r.repetitions;
  j["warmup_discarded"] = r.warmup_discarded;
  j["p50_ms"] = r.p50_ms;
  j["p95_ms"] = r.p95_ms;
  j["minima_ms"] = r.minima_ms;
  out << j.dump() << '\n';
}

void write_latency_csv_header(std::ostream& out) { out << "mode,pairs,repetitions,warmup_discarded,p50_ms,p95_ms\n"; }

void write_latency_csv(std::ostream& out, const LatencyReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%zu,%.9g,%.9g", to_string(r.mode).c_str(), r.pairs, r.repetitions,
                r.warmup_discarded, r.p50_ms, r.p95_ms);
  out << buf << '\n';
}

}  // namespace ed2lm
