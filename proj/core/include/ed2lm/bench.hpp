#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/memstore.hpp"
#include "ed2lm/parameters.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

class Vocabulary;

enum class InferenceMode { cross_attention, decomposed };
std::string to_string(InferenceMode mode);
InferenceMode parse_inference_mode(const std::string& name);

// Analytic forward-pass cost. A multiply-accumulate counts as 2 FLOPs, a
// layer norm as 5 s d, a softmax over s x s' scores as 3 s s'.
//   attention:       self-attention sublayers (projections, scores, norm)
//   cross_attention: the memory-dependent part of cross-attention: K/V
//                    projections of the memory, scores, weighted sum, softmax
//   feed_forward:    FFN sublayers including their norm
//   projections:     cross-attention Q/O projections and norm, final norms,
//                    and the vocabulary projection
//   embeddings:      token + position lookups (s d adds)
struct FlopsReport {
  InferenceMode mode = InferenceMode::decomposed;
  std::size_t doc_len = 0;
  std::size_t query_len = 0;
  std::uint64_t embeddings = 0;
  std::uint64_t attention = 0;
  std::uint64_t cross_attention = 0;
  std::uint64_t feed_forward = 0;
  std::uint64_t projections = 0;
  std::uint64_t total = 0;
};

// cross_attention: encoder over doc_len + query_len tokens plus one decoder
// step reading all of them. decomposed: decoder over query_len + 2
// positions reading ceil(doc_len / 2^b) memory rows; the encoder runs
// offline and is not counted.
FlopsReport estimate_flops(const ModelConfig& config, InferenceMode mode, std::size_t doc_len,
                           std::size_t query_len);

// The ceil(p n)-th smallest value, p in (0, 1].
double nearest_rank_percentile(std::vector<double> values, double p);

struct LatencyPair {
  std::string query;  // raw text; tokenization is part of the timed call
  std::string doc_id;
};

struct LatencyReport {
  InferenceMode mode = InferenceMode::decomposed;
  std::vector<double> minima_ms;  // one per pair, workload order
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  std::size_t pairs = 0;
  std::size_t repetitions = 0;
  std::size_t warmup_discarded = 0;
};

// Monotonic time in milliseconds.
using Clock = std::function<double()>;
double steady_clock_ms();

// Scores one pair end to end; the return value is kept so the call cannot
// be optimized away.
using PairScorer = std::function<double(const LatencyPair&)>;

// Times every pair `repetitions` times and keeps the minimum. The first pair
// is scored once untimed beforehand as warmup.
LatencyReport run_latency(std::span<const LatencyPair> workload, const PairScorer& scorer, InferenceMode mode,
                          std::size_t repetitions = 10, const Clock& clock = steady_clock_ms);

// Smallest positive step the clock shows over a short probe, in milliseconds.
double clock_resolution_ms(const Clock& clock);

// Tokenize query and doc text, then score with cross_attention_forward.
PairScorer cross_attention_scorer(const std::map<std::string, std::string>& docs, const Vocabulary& vocab,
                                  const Parameters<float>& params, const ModelConfig& config);

// Tokenize the query, then score_pair against the resident store.
PairScorer decomposed_scorer(const MemoryStore& store, const Vocabulary& vocab, const Parameters<float>& params,
                             const ModelConfig& config, const ScoreOptions& options = {});

void write_flops_jsonl(std::ostream& out, const FlopsReport& report);
void write_flops_csv_header(std::ostream& out);
void write_flops_csv(std::ostream& out, const FlopsReport& report);
void write_latency_jsonl(std::ostream& out, const LatencyReport& report);
void write_latency_csv_header(std::ostream& out);
void write_latency_csv(std::ostream& out, const LatencyReport& report);

}  // namespace ed2lm
