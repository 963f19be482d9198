#include "ed2lm/model.hpp"

#include "ed2lm/error.hpp"
#include "layers.hpp"

namespace ed2lm {

namespace {

template <typename S>
void require_finite(const MatrixRef<S>& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " contains non-finite values");
}

void check_tokens(std::span<const TokenId> ids, const ModelConfig& config, const char* what) {
  for (TokenId id : ids) {
    if (id >= config.vocab_size) {
      throw InputError(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

}  // namespace

template <typename S>
Matrix<S> multihead_attention(const MatrixRef<S>& queries, const MatrixRef<S>& keys_values, const AttentionMask& mask,
                              const AttentionWeights<S>& weights, std::uint32_t num_heads) {
  const Index d = weights.query.rows();
  if (num_heads == 0 || d % num_heads != 0) throw ConfigError("d_model not divisible by num_heads");
  if (queries.cols() != d || keys_values.cols() != d) {
    throw ConfigError("attention input width does not match d_model " + std::to_string(d));
  }
  for (const Matrix<S>* w : {&weights.query, &weights.key, &weights.value, &weights.output}) {
    if (w->rows() != d || w->cols() != d) throw ConfigError("attention projection is not d_model x d_model");
  }
  if (keys_values.rows() == 0) throw InputError("attention over zero keys");
  if (mask.causal && queries.rows() != keys_values.rows()) {
    throw ConfigError("causal mask needs as many queries as keys");
  }
  require_finite<S>(queries, "attention queries");
  require_finite<S>(keys_values, "attention keys/values");
  return detail::attention<S>(queries, keys_values, mask, weights, num_heads, nullptr);
}

template <typename S>
PooledStates<S> funnel_pool(const MatrixRef<S>& states, std::size_t valid) {
  if (states.rows() == 0) throw InputError("funnel_pool on empty input");
  return {detail::pool_rows<S>(states), (valid + 1) / 2};
}

template <typename S>
EncoderOutput<S> encoder_forward(const TokenSequence& doc, const Parameters<S>& params, const ModelConfig& config) {
  if (doc.length > doc.ids.size()) throw InputError("document length exceeds its id buffer");
  if (doc.length > config.max_doc_len) {
    throw InputError("document of " + std::to_string(doc.length) + " tokens exceeds max_doc_len " +
                     std::to_string(config.max_doc_len));
  }
  if (doc.length == 0) throw InputError("empty document");
  check_tokens(doc.tokens(), config, "document");
  EncoderOutput<S> out;
  out.matrix = detail::encode<S>(doc.tokens(), params, config, nullptr);
  out.rows_valid = static_cast<std::size_t>(out.matrix.rows());
  return out;
}

template <typename S>
Matrix<S> decoder_forward(const TokenSequence& decoder_input, const MatrixRef<S>& memory,
                          std::size_t memory_rows_valid, const Parameters<S>& params, const ModelConfig& config) {
  if (memory.cols() != static_cast<Index>(config.d_model)) {
    throw ConfigError("memory width " + std::to_string(memory.cols()) + " differs from d_model " +
                      std::to_string(config.d_model));
  }
  if (memory_rows_valid == 0 || memory.rows() == 0) throw InputError("decoder memory has no valid rows");
  if (memory_rows_valid > static_cast<std::size_t>(memory.rows())) {
    throw InputError("memory rows_valid exceeds matrix rows");
  }
  if (decoder_input.length > decoder_input.ids.size()) throw InputError("query length exceeds its id buffer");
  if (decoder_input.length == 0) throw InputError("empty decoder input");
  if (decoder_input.length > config.decoder_positions()) {
    throw InputError("decoder input of " + std::to_string(decoder_input.length) + " positions exceeds " +
                     std::to_string(config.decoder_positions()));
  }
  check_tokens(decoder_input.tokens(), config, "query");
  return detail::decode<S>(decoder_input.tokens(), memory, memory_rows_valid, params, config, nullptr);
}

template <typename S>
Matrix<S> joint_forward(const TokenSequence& doc, const TokenSequence& decoder_input, const Parameters<S>& params,
                        const ModelConfig& config) {
  const EncoderOutput<S> memory = encoder_forward<S>(doc, params, config);
  return decoder_forward<S>(decoder_input, memory, params, config);
}

template <typename S>
Matrix<S> cross_attention_forward(const TokenSequence& doc, const TokenSequence& query, const Parameters<S>& params,
                                  const ModelConfig& config) {
  if (doc.length > config.max_doc_len || query.length > config.max_query_len) {
    throw InputError("cross-attention input exceeds max_doc_len + max_query_len");
  }
  if (doc.length + query.length == 0) throw InputError("empty cross-attention input");
  std::vector<TokenId> joined(doc.tokens().begin(), doc.tokens().end());
  joined.insert(joined.end(), query.tokens().begin(), query.tokens().end());
  check_tokens(joined, config, "cross-attention input");
  ModelConfig flat = config;
  flat.funnel_blocks = 0;
  const Matrix<S> memory = detail::encode<S>(joined, params, flat, nullptr);
  const TokenId start = kDecoderStartId;
  return detail::decode<S>(std::span<const TokenId>(&start, 1), memory, static_cast<std::size_t>(memory.rows()),
                           params, flat, nullptr);
}

#define ED2LM_INSTANTIATE(S)                                                                                  \
  template Matrix<S> multihead_attention<S>(const MatrixRef<S>&, const MatrixRef<S>&, const AttentionMask&,  \
                                            const AttentionWeights<S>&, std::uint32_t);                       \
  template PooledStates<S> funnel_pool<S>(const MatrixRef<S>&, std::size_t);                                 \
  template EncoderOutput<S> encoder_forward<S>(const TokenSequence&, const Parameters<S>&, const ModelConfig&); \
  template Matrix<S> decoder_forward<S>(const TokenSequence&, const MatrixRef<S>&, std::size_t,               \
                                        const Parameters<S>&, const ModelConfig&);                            \
  template Matrix<S> joint_forward<S>(const TokenSequence&, const TokenSequence&, const Parameters<S>&,       \
                                      const ModelConfig&);                                                    \
  template Matrix<S> cross_attention_forward<S>(const TokenSequence&, const TokenSequence&, const Parameters<S>&, \
                                                const ModelConfig&);

ED2LM_INSTANTIATE(float)
ED2LM_INSTANTIATE(double)

#undef ED2LM_INSTANTIATE

}  // namespace ed2lm
