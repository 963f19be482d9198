#include "ed2lm/config.hpp"

#include "binary_io.hpp"
#include "ed2lm/error.hpp"

#include <string>

namespace ed2lm {

namespace {
void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid model config: " + what);
}
}  // namespace

void ModelConfig::validate() const {
  require(num_encoder_layers > 0, "num_encoder_layers must be positive");
  require(num_decoder_layers > 0, "num_decoder_layers must be positive");
  require(d_model > 0, "d_model must be positive");
  require(num_heads > 0, "num_heads must be positive");
  require(d_ff > 0, "d_ff must be positive");
  require(max_doc_len > 0, "max_doc_len must be positive");
  require(max_query_len > 0, "max_query_len must be positive");
  require(d_model % num_heads == 0, "d_model (" + std::to_string(d_model) + ") not divisible by num_heads (" +
                                        std::to_string(num_heads) + ")");
  require(funnel_blocks == 0 || num_encoder_layers % funnel_blocks == 0,
          "num_encoder_layers (" + std::to_string(num_encoder_layers) + ") not divisible by funnel_blocks (" +
              std::to_string(funnel_blocks) + ")");
  require(funnel_blocks < 32, "funnel_blocks too large");
  require(vocab_size >= kNumSpecialTokens, "vocab_size must hold the 5 special tokens");
}

std::uint32_t ModelConfig::layers_per_block() const {
  return funnel_blocks == 0 ? num_encoder_layers : num_encoder_layers / funnel_blocks;
}

std::size_t pooled_length(std::size_t length, std::uint32_t pools) {
  for (std::uint32_t i = 0; i < pools; ++i) length = (length + 1) / 2;
  return length;
}

void append_config(std::vector<std::uint8_t>& out, const ModelConfig& c) {
  detail::ByteWriter w(out);
  w.u32(c.num_encoder_layers);
  w.u32(c.num_decoder_layers);
  w.u32(c.d_model);
  w.u32(c.num_heads);
  w.u32(c.d_ff);
  w.u32(c.vocab_size);
  w.u32(c.max_doc_len);
  w.u32(c.max_query_len);
  w.u32(c.funnel_blocks);
  w.u64(c.seed);
}

ModelConfig read_config(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  detail::ByteReader r(bytes, offset);
  ModelConfig c;
  c.num_encoder_layers = r.u32();
  c.num_decoder_layers = r.u32();
  c.d_model = r.u32();
  c.num_heads = r.u32();
  c.d_ff = r.u32();
  c.vocab_size = r.u32();
  c.max_doc_len = r.u32();
  c.max_query_len = r.u32();
  c.funnel_blocks = r.u32();
  c.seed = r.u64();
  offset = r.offset();
  return c;
}

}  // namespace ed2lm
