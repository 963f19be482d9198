#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

// Q/K/V/output projections of one attention block, each d_model x d_model.
template <typename Scalar>
struct AttentionWeights {
  Matrix<Scalar> query;
  Matrix<Scalar> key;
  Matrix<Scalar> value;
  Matrix<Scalar> output;
};

template <typename Scalar>
struct FeedForwardWeights {
  Matrix<Scalar> w_in;   // d_model x d_ff
  Matrix<Scalar> b_in;   // 1 x d_ff
  Matrix<Scalar> w_out;  // d_ff x d_model
  Matrix<Scalar> b_out;  // 1 x d_model
};

// Pre-norm encoder layer: x + Attn(LN(x)), then h + FFN(LN(h)).
template <typename Scalar>
struct EncoderLayerWeights {
  Matrix<Scalar> attn_norm;  // 1 x d_model
  AttentionWeights<Scalar> self_attn;
  Matrix<Scalar> ffn_norm;  // 1 x d_model
  FeedForwardWeights<Scalar> ffn;
};

// Pre-norm decoder layer: causal self-attention, cross-attention, FFN.
template <typename Scalar>
struct DecoderLayerWeights {
  Matrix<Scalar> self_norm;
  AttentionWeights<Scalar> self_attn;
  Matrix<Scalar> cross_norm;
  AttentionWeights<Scalar> cross_attn;
  Matrix<Scalar> ffn_norm;
  FeedForwardWeights<Scalar> ffn;
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  std::uint32_t rank;
  Matrix<Scalar>* tensor;
};

template <typename Scalar>
struct ConstNamedTensor {
  std::string name;
  std::uint32_t rank;
  const Matrix<Scalar>* tensor;
};

// All weights of the encoder-decoder model. The output projection is tied
// to `token_embedding`, so there is no separate vocabulary matrix.
template <typename Scalar>
struct Parameters {
  Matrix<Scalar> token_embedding;     // vocab x d_model
  Matrix<Scalar> encoder_position;    // encoder_positions x d_model
  Matrix<Scalar> decoder_position;    // decoder_positions x d_model
  std::vector<EncoderLayerWeights<Scalar>> encoder;
  Matrix<Scalar> encoder_final_norm;  // 1 x d_model
  std::vector<DecoderLayerWeights<Scalar>> decoder;
  Matrix<Scalar> decoder_final_norm;  // 1 x d_model

  // Same shapes as `config` requires, every value zero (gradient buffers).
  static Parameters zeros(const ModelConfig& config);
  // Seeded random initialization; layer norm gains start at one.
  static Parameters initialize(const ModelConfig& config);

  // Tensors in declaration order. Names are stable and zero-padded, e.g.
  // "decoder.layer_01.cross_attn.key".
  std::vector<NamedTensor<Scalar>> tensors();
  std::vector<ConstNamedTensor<Scalar>> tensors() const;

  // Throws ConfigError naming the first tensor whose shape disagrees with `config`.
  void check_shapes(const ModelConfig& config) const;
  bool all_finite() const;
  std::size_t parameter_count() const;

  template <typename Other>
  Parameters<Other> cast() const;
};

// Expected (rows, cols, rank) for every tensor name, in declaration order.
struct TensorShape {
  std::string name;
  std::uint32_t rank;
  Index rows;
  Index cols;
};
std::vector<TensorShape> expected_shapes(const ModelConfig& config);

// Checkpoint file: magic "ED2LMCK1", the model config, then every tensor in
// name-sorted order as (u32 name length, name, u32 rank, u32 dims..., f32 row-major payload).
std::vector<std::uint8_t> serialize_checkpoint(const ModelConfig& config, const Parameters<float>& params);

struct Checkpoint {
  ModelConfig config;
  Parameters<float> params;
};
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const Parameters<float>& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename Scalar>
template <typename Other>
Parameters<Other> Parameters<Scalar>::cast() const {
  Parameters<Other> out;
  out.encoder.resize(encoder.size());
  out.decoder.resize(decoder.size());
  auto src = tensors();
  auto dst = out.tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<Other>();
  return out;
}

extern template struct Parameters<float>;
extern template struct Parameters<double>;

}  // namespace ed2lm
