#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/parameters.hpp"
#include "ed2lm/tensor.hpp"

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

// Token ids plus the count of leading non-padding positions.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::size_t length = 0;

  TokenSequence() = default;
  explicit TokenSequence(std::vector<TokenId> tokens) : ids(std::move(tokens)), length(ids.size()) {}
  TokenSequence(std::vector<TokenId> tokens, std::size_t valid) : ids(std::move(tokens)), length(valid) {}

  std::span<const TokenId> tokens() const { return {ids.data(), length}; }
  bool empty() const { return length == 0; }
};

// The memory M a decoder reads: encoder states after the final norm,
// rows = ceil(document length / 2^b).
template <typename Scalar>
struct EncoderOutput {
  std::string doc_id;
  Matrix<Scalar> matrix;
  std::size_t rows_valid = 0;
};

// Masks are prefixes: query row i may attend to keys [0, limit(i)) where
// limit(i) = min(key_valid, causal ? i + 1 : keys).
struct AttentionMask {
  bool causal = false;
  std::size_t key_valid = std::numeric_limits<std::size_t>::max();

  static AttentionMask none() { return {}; }
  static AttentionMask causal_mask() { return {true}; }
  static AttentionMask keys(std::size_t valid) { return {false, valid}; }

  std::size_t limit(std::size_t row, std::size_t keys) const {
    std::size_t l = causal ? row + 1 : keys;
    if (l > keys) l = keys;
    return l < key_valid ? l : key_valid;
  }
};

// Scaled dot-product multi-head attention with Q/K/V/output projections.
template <typename Scalar>
Matrix<Scalar> multihead_attention(const MatrixRef<Scalar>& queries, const MatrixRef<Scalar>& keys_values,
                                   const AttentionMask& mask, const AttentionWeights<Scalar>& weights,
                                   std::uint32_t num_heads);

template <typename Scalar>
struct PooledStates {
  Matrix<Scalar> states;
  std::size_t valid = 0;
};

// Mean of adjacent row pairs; an odd trailing row passes through.
template <typename Scalar>
PooledStates<Scalar> funnel_pool(const MatrixRef<Scalar>& states, std::size_t valid);

template <typename Scalar>
EncoderOutput<Scalar> encoder_forward(const TokenSequence& doc, const Parameters<Scalar>& params,
                                      const ModelConfig& config);

// Decoder over `decoder_input` (already shifted: start token first) reading
// `memory`. Returns logits, one row per input position.
template <typename Scalar>
Matrix<Scalar> decoder_forward(const TokenSequence& decoder_input, const MatrixRef<Scalar>& memory,
                               std::size_t memory_rows_valid, const Parameters<Scalar>& params,
                               const ModelConfig& config);

template <typename Scalar>
Matrix<Scalar> decoder_forward(const TokenSequence& decoder_input, const EncoderOutput<Scalar>& memory,
                               const Parameters<Scalar>& params, const ModelConfig& config) {
  return decoder_forward<Scalar>(decoder_input, memory.matrix, memory.rows_valid, params, config);
}

// decoder_forward(decoder_input, encoder_forward(doc)).
template <typename Scalar>
Matrix<Scalar> joint_forward(const TokenSequence& doc, const TokenSequence& decoder_input,
                             const Parameters<Scalar>& params, const ModelConfig& config);

// The cross-attention ranker layout used as the latency baseline: one
// encoder pass over doc ++ query without funnel pooling, then a single
// decoder step from the start token. Returns 1 x vocab logits.
template <typename Scalar>
Matrix<Scalar> cross_attention_forward(const TokenSequence& doc, const TokenSequence& query,
                                       const Parameters<Scalar>& params, const ModelConfig& config);

}  // namespace ed2lm
