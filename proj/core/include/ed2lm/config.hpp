#pragma once

#include "ed2lm/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ed2lm {

// Reserved vocabulary ids. The decoder is primed with PAD, as in T5.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kTrueId = 3;
inline constexpr TokenId kFalseId = 4;
inline constexpr TokenId kDecoderStartId = kPadId;
inline constexpr std::uint32_t kNumSpecialTokens = 5;

// Architecture hyperparameters of the encoder-decoder model.
struct ModelConfig {
  std::uint32_t num_encoder_layers = 2;
  std::uint32_t num_decoder_layers = 2;
  std::uint32_t d_model = 64;
  std::uint32_t num_heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t vocab_size = 1024;
  std::uint32_t max_doc_len = 256;
  // Query tokens only; the class and eos positions come on top.
  std::uint32_t max_query_len = 32;
  // Number of funnel blocks; 0 keeps the encoder uncompressed.
  std::uint32_t funnel_blocks = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError when an invariant does not hold.
  void validate() const;

  std::uint32_t head_dim() const { return d_model / num_heads; }
  std::uint32_t layers_per_block() const;

  // Position table sizes. The encoder table also covers the query so the
  // cross-attention baseline can encode a concatenated document + query.
  std::uint32_t encoder_positions() const { return max_doc_len + max_query_len; }
  // query + extra eos (generation mode) + class + eos
  std::uint32_t decoder_positions() const { return max_query_len + 3; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Rows left after `pools` halvings with the trailing odd row kept: ceil(len / 2^pools).
std::size_t pooled_length(std::size_t length, std::uint32_t pools);

// Field-order-fixed little-endian encoding used by the checkpoint header.
void append_config(std::vector<std::uint8_t>& out, const ModelConfig& config);
ModelConfig read_config(std::span<const std::uint8_t> bytes, std::size_t& offset);

}  // namespace ed2lm
