#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/model.hpp"
#include "ed2lm/parameters.hpp"
#include "ed2lm/training.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

class MemoryStore;
class Vocabulary;

struct GenerationConfig {
  std::uint32_t k = 10;
  std::uint32_t max_len = 0;  // 0 means the model's max_query_len
  std::uint32_t num_samples = 1;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Layout the checkpoint was trained with; ranking checkpoints work but
  // were never taught to end a question with eos.
  TargetMode checkpoint_mode = TargetMode::generation;

  std::uint32_t effective_max_len(const ModelConfig& config) const { return max_len == 0 ? config.max_query_len : max_len; }
  void validate(const ModelConfig& config) const;
};

using Rng = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

// Draws from softmax(logits / temperature) restricted to the k largest
// logits; ties at the boundary go to the lower token id.
TokenId topk_sample(std::span<const float> logits, std::uint32_t k, double temperature, Rng& rng);
TokenId topk_sample(std::span<const double> logits, std::uint32_t k, double temperature, Rng& rng);

// The k token ids topk_sample may return, ordered by logit then id.
std::vector<TokenId> topk_support(std::span<const float> logits, std::uint32_t k);

// Stream seed for one document: stable across runs and platforms.
std::uint64_t document_seed(std::uint64_t seed, std::string_view doc_id);

// Autoregressive sampling from the start token against `memory`. Each
// sample stops at the first eos or after max_len tokens; special tokens are
// stripped from the returned ids.
std::vector<std::vector<TokenId>> generate_questions(const MatrixRef<float>& memory, std::size_t rows_valid,
                                                     const Parameters<float>& params, const ModelConfig& config,
                                                     const GenerationConfig& gen, Rng& rng);

// Encodes `doc` first, then samples with an RNG seeded from (gen.seed, doc_id).
std::vector<std::vector<TokenId>> generate_questions(const TokenSequence& doc, std::string_view doc_id,
                                                     const Parameters<float>& params, const ModelConfig& config,
                                                     const GenerationConfig& gen);

// doc_id -> detokenized questions, for every document in the store.
std::map<std::string, std::vector<std::string>> generate_for_store(const MemoryStore& store,
                                                                   const Parameters<float>& params,
                                                                   const ModelConfig& config,
                                                                   const GenerationConfig& gen,
                                                                   const Vocabulary& vocab, std::size_t threads = 1);

// Mean over questions of the fraction of question positions whose token
// occurs anywhere in the paragraph. Empty questions are skipped.
double overlap_rate(std::span<const std::vector<TokenId>> questions, std::span<const TokenId> paragraph);

// `doc_id \t sample_index \t question`
void write_generated(std::ostream& out, const std::map<std::string, std::vector<std::string>>& generated);
std::map<std::string, std::vector<std::string>> read_generated(const std::filesystem::path& path);

}  // namespace ed2lm
