#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/model.hpp"
#include "ed2lm/parameters.hpp"
#include "ed2lm/ranking_run.hpp"
#include "ed2lm/training.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

class Vocabulary;
struct Corpus;
using QuerySet = std::map<std::string, std::string>;

// How a pair score is read off the decoder.
//   true_false:        softmax over {TRUE, FALSE} logits at the class position,
//                      TRUE component. With include_eos, each class
//                      probability is multiplied by P(eos | class) first.
//   query_likelihood:  exp of the mean query-token log-probability, i.e. the
//                      geometric-mean token probability (for models trained
//                      without the class token).
enum class ScoreKind { true_false, query_likelihood };

struct ScoreOptions {
  ScoreKind kind = ScoreKind::true_false;
  TargetMode target_mode = TargetMode::ranking;
  bool include_eos = false;
};

std::string to_string(ScoreKind kind);
ScoreKind parse_score_kind(const std::string& name);

struct PairScore {
  std::string query_id;
  std::string doc_id;
  double score = 0.5;
};

// 1 / (1 + exp(l_false - l_true)), computed without overflow.
double two_way_score(double logit_true, double logit_false);

// Score of `query` against an arbitrary memory. Both the store path and the
// joint path reduce to this after obtaining M.
template <typename Scalar>
double score_against_memory(const TokenSequence& query, const MatrixRef<Scalar>& memory, std::size_t rows_valid,
                            const Parameters<Scalar>& params, const ModelConfig& config,
                            const ScoreOptions& options = {});

// Reference path: joint_forward over (doc, query) with no store involved.
template <typename Scalar>
double joint_score(const TokenSequence& doc, const TokenSequence& query, const Parameters<Scalar>& params,
                   const ModelConfig& config, const ScoreOptions& options = {});

// Read-only collection of encoder outputs keyed by doc id. Matrices live in
// one contiguous f32 payload, each holding rows_valid x d_model values.
class MemoryStore {
 public:
  struct Entry {
    std::string doc_id;
    std::uint64_t offset = 0;  // bytes from the payload start
    std::uint32_t rows_valid = 0;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  MemoryStore() = default;

  std::uint32_t d_model() const { return d_model_; }
  std::uint32_t funnel_blocks() const { return funnel_blocks_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::string_view doc_id) const;
  std::span<const Entry> entries() const { return entries_; }

  // Throws LookupError for unknown ids.
  MatrixMap<float> lookup(std::string_view doc_id) const;
  const Entry& entry(std::string_view doc_id) const;

  std::span<const float> payload() const { return payload_; }
  std::size_t payload_floats() const { return payload_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static MemoryStore deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static MemoryStore load(const std::filesystem::path& path);

  friend bool operator==(const MemoryStore&, const MemoryStore&) = default;

 private:
  friend class MemoryStoreBuilder;
  std::uint32_t d_model_ = 0;
  std::uint32_t funnel_blocks_ = 0;
  std::vector<Entry> entries_;  // sorted by doc_id
  std::vector<float> payload_;
};

// Appends encoder outputs one document at a time.
class MemoryStoreBuilder {
 public:
  MemoryStoreBuilder(std::uint32_t d_model, std::uint32_t funnel_blocks);
  void add(const EncoderOutput<float>& output);
  MemoryStore finish() &&;

 private:
  MemoryStore store_;
};

// Encodes every document. Documents longer than max_doc_len are truncated
// with a warning; empty documents are rejected.
MemoryStore build_store(const std::map<std::string, TokenSequence>& docs, const Parameters<float>& params,
                        const ModelConfig& config);
MemoryStore build_store(const Corpus& corpus, const Vocabulary& vocab, const Parameters<float>& params,
                        const ModelConfig& config);

// Decoder-only scoring against a stored memory.
PairScore score_pair(const TokenSequence& query, std::string_view doc_id, const MemoryStore& store,
                     const Parameters<float>& params, const ModelConfig& config, const ScoreOptions& options = {});

// Rescores the top `depth` candidates of every query and sorts them by
// descending score, ties by ascending doc id. Candidates past `depth` keep
// their order below the reranked block with scores strictly beneath it.
// Every run query must have text in `queries`. Parallel over queries when
// threads > 1; the result does not depend on the thread count.
RankingRun rerank(const RankingRun& run_in, const QuerySet& queries, const Vocabulary& vocab,
                  const MemoryStore& store, const Parameters<float>& params, const ModelConfig& config,
                  std::size_t depth, const ScoreOptions& options = {}, std::size_t threads = 1);

// Sorts a rescored block by descending score, then ascending doc id.
void sort_by_score(std::vector<RankedDoc>& docs);

}  // namespace ed2lm
