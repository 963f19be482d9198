#pragma once

// Forward/backward building blocks shared by inference (model.cpp) and
// training (training.cpp). Forward functions take an optional cache; when
// it is non-null they record what the matching backward pass needs.

#include "ed2lm/config.hpp"
#include "ed2lm/error.hpp"
#include "ed2lm/model.hpp"
#include "ed2lm/parameters.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace ed2lm::detail {

inline constexpr double kNormEpsilon = 1e-6;

// ---------------------------------------------------------------- layer norm

template <typename S>
struct NormCache {
  Matrix<S> normalized;
  std::vector<S> inv_std;
};

// Scale-only layer norm over the feature dimension.
template <typename S>
Matrix<S> layer_norm(const MatrixRef<S>& x, const Matrix<S>& gain, NormCache<S>* cache) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  Matrix<S> y(rows, cols);
  if (cache) {
    cache->normalized.resize(rows, cols);
    cache->inv_std.resize(static_cast<std::size_t>(rows));
  }
  for (Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const S var = centered.square().mean();
    const S inv = S(1) / std::sqrt(var + static_cast<S>(kNormEpsilon));
    const auto xhat = (centered * inv).eval();
    y.row(r) = (xhat * gain.row(0).array()).matrix();
    if (cache) {
      cache->normalized.row(r) = xhat.matrix();
      cache->inv_std[static_cast<std::size_t>(r)] = inv;
    }
  }
  return y;
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const Matrix<S>& gain, const NormCache<S>& c, Matrix<S>& d_gain) {
  const Index rows = dy.rows();
  Matrix<S> dx(rows, dy.cols());
  for (Index r = 0; r < rows; ++r) {
    const auto xhat = c.normalized.row(r).array();
    d_gain.row(0).array() += dy.row(r).array() * xhat;
    const auto dxhat = (dy.row(r).array() * gain.row(0).array()).eval();
    const S mean_d = dxhat.mean();
    const S mean_dx = (dxhat * xhat).mean();
    dx.row(r) = ((dxhat - mean_d - xhat * mean_dx) * c.inv_std[static_cast<std::size_t>(r)]).matrix();
  }
  return dx;
}

// ----------------------------------------------------------------- attention

template <typename S>
struct AttentionCache {
  Matrix<S> q_in;
  Matrix<S> kv_in;
  Matrix<S> q;
  Matrix<S> k;
  Matrix<S> v;
  std::vector<Matrix<S>> probs;  // one (rows x keys) matrix per head
  Matrix<S> context;
};

template <typename S>
Matrix<S> attention(const MatrixRef<S>& xq, const MatrixRef<S>& xkv, const AttentionMask& mask,
                    const AttentionWeights<S>& w, std::uint32_t num_heads, AttentionCache<S>* cache) {
  const Index rows = xq.rows();
  const Index keys = xkv.rows();
  const Index d = xq.cols();
  const Index dh = d / num_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Matrix<S> q = xq * w.query;
  Matrix<S> k = xkv * w.key;
  Matrix<S> v = xkv * w.value;
  Matrix<S> context(rows, d);
  Matrix<S> probs(rows, keys);
  if (cache) cache->probs.clear();

  for (std::uint32_t h = 0; h < num_heads; ++h) {
    const Index off = static_cast<Index>(h) * dh;
    probs.noalias() = q.middleCols(off, dh) * k.middleCols(off, dh).transpose();
    for (Index i = 0; i < rows; ++i) {
      const auto limit = static_cast<Index>(mask.limit(static_cast<std::size_t>(i), static_cast<std::size_t>(keys)));
      if (limit == 0) throw InputError("attention row " + std::to_string(i) + " has no visible keys");
      auto row = probs.row(i);
      const S peak = row.head(limit).maxCoeff() * scale;
      row.head(limit) = (row.head(limit).array() * scale - peak).exp().matrix();
      row.head(limit) /= row.head(limit).sum();
      row.tail(keys - limit).setZero();
    }
    context.middleCols(off, dh).noalias() = probs * v.middleCols(off, dh);
    if (cache) cache->probs.push_back(probs);
  }
  Matrix<S> out = context * w.output;
  if (cache) {
    cache->q_in = xq;
    cache->kv_in = xkv;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
  }
  return out;
}

// Accumulates weight gradients into `g`; writes input gradients.
template <typename S>
void attention_backward(const Matrix<S>& d_out, const AttentionCache<S>& c, const AttentionWeights<S>& w,
                        AttentionWeights<S>& g, std::uint32_t num_heads, Matrix<S>& d_xq, Matrix<S>& d_xkv) {
  const Index d = c.q.cols();
  const Index dh = d / num_heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  g.output.noalias() += c.context.transpose() * d_out;
  const Matrix<S> d_ctx = d_out * w.output.transpose();
  Matrix<S> dq(c.q.rows(), d);
  Matrix<S> dk(c.k.rows(), d);
  Matrix<S> dv(c.v.rows(), d);
  Matrix<S> d_probs;
  for (std::uint32_t h = 0; h < num_heads; ++h) {
    const Index off = static_cast<Index>(h) * dh;
    const Matrix<S>& p = c.probs[h];
    d_probs.noalias() = d_ctx.middleCols(off, dh) * c.v.middleCols(off, dh).transpose();
    dv.middleCols(off, dh).noalias() = p.transpose() * d_ctx.middleCols(off, dh);
    for (Index i = 0; i < p.rows(); ++i) {
      const S dot = (p.row(i).array() * d_probs.row(i).array()).sum();
      d_probs.row(i) = (p.row(i).array() * (d_probs.row(i).array() - dot) * scale).matrix();
    }
    dq.middleCols(off, dh).noalias() = d_probs * c.k.middleCols(off, dh);
    dk.middleCols(off, dh).noalias() = d_probs.transpose() * c.q.middleCols(off, dh);
  }
  g.query.noalias() += c.q_in.transpose() * dq;
  g.key.noalias() += c.kv_in.transpose() * dk;
  g.value.noalias() += c.kv_in.transpose() * dv;
  d_xq.noalias() = dq * w.query.transpose();
  d_xkv.noalias() = dk * w.key.transpose();
  d_xkv.noalias() += dv * w.value.transpose();
}

// -------------------------------------------------------------- feed-forward

template <typename S>
struct FfnCache {
  Matrix<S> x;
  Matrix<S> pre;
  Matrix<S> act;
};

// tanh approximation of GELU, elementwise.
template <typename S>
Matrix<S> gelu(const Matrix<S>& x) {
  constexpr S kC = static_cast<S>(0.7978845608028654);
  const auto a = x.array();
  const auto t = (kC * (a + static_cast<S>(0.044715) * a.cube())).tanh().eval();
  return (S(0.5) * a * (S(1) + t)).matrix();
}

template <typename S>
Matrix<S> gelu_derivative(const Matrix<S>& x) {
  constexpr S kC = static_cast<S>(0.7978845608028654);
  const auto a = x.array();
  const auto t = (kC * (a + static_cast<S>(0.044715) * a.cube())).tanh().eval();
  const auto d_inner = kC * (S(1) + static_cast<S>(3 * 0.044715) * a.square());
  return (S(0.5) * (S(1) + t) + S(0.5) * a * (S(1) - t.square()) * d_inner).matrix();
}

template <typename S>
Matrix<S> feed_forward(const MatrixRef<S>& x, const FeedForwardWeights<S>& w, FfnCache<S>* cache) {
  Matrix<S> pre = x * w.w_in;
  pre.rowwise() += w.b_in.row(0);
  Matrix<S> act = gelu<S>(pre);
  Matrix<S> out = act * w.w_out;
  out.rowwise() += w.b_out.row(0);
  if (cache) {
    cache->x = x;
    cache->pre = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

template <typename S>
Matrix<S> feed_forward_backward(const Matrix<S>& d_out, const FfnCache<S>& c, const FeedForwardWeights<S>& w,
                                FeedForwardWeights<S>& g) {
  g.w_out.noalias() += c.act.transpose() * d_out;
  g.b_out.row(0) += d_out.colwise().sum();
  Matrix<S> d_pre = d_out * w.w_out.transpose();
  d_pre.array() *= gelu_derivative<S>(c.pre).array();
  g.w_in.noalias() += c.x.transpose() * d_pre;
  g.b_in.row(0) += d_pre.colwise().sum();
  return d_pre * w.w_in.transpose();
}

// ------------------------------------------------------------------- pooling

template <typename S>
Matrix<S> pool_rows(const MatrixRef<S>& x) {
  const Index rows = x.rows();
  const Index out_rows = (rows + 1) / 2;
  Matrix<S> y(out_rows, x.cols());
  for (Index i = 0; i < out_rows; ++i) {
    if (2 * i + 1 < rows) {
      y.row(i) = (x.row(2 * i) + x.row(2 * i + 1)) * S(0.5);
    } else {
      y.row(i) = x.row(2 * i);
    }
  }
  return y;
}

template <typename S>
Matrix<S> pool_rows_backward(const Matrix<S>& dy, Index input_rows) {
  Matrix<S> dx(input_rows, dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    if (2 * i + 1 < input_rows) {
      dx.row(2 * i) = dy.row(i) * S(0.5);
      dx.row(2 * i + 1) = dy.row(i) * S(0.5);
    } else {
      dx.row(2 * i) = dy.row(i);
    }
  }
  return dx;
}

// ------------------------------------------------------------------- stacks

template <typename S>
Matrix<S> embed(std::span<const TokenId> ids, const Matrix<S>& tokens, const Matrix<S>& positions) {
  Matrix<S> x(static_cast<Index>(ids.size()), tokens.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    x.row(static_cast<Index>(i)) = tokens.row(ids[i]) + positions.row(static_cast<Index>(i));
  }
  return x;
}

template <typename S>
void embed_backward(const Matrix<S>& dx, std::span<const TokenId> ids, Matrix<S>& d_tokens, Matrix<S>& d_positions) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    d_tokens.row(ids[i]) += dx.row(static_cast<Index>(i));
    d_positions.row(static_cast<Index>(i)) += dx.row(static_cast<Index>(i));
  }
}

template <typename S>
struct EncoderLayerCache {
  NormCache<S> attn_norm;
  AttentionCache<S> attn;
  NormCache<S> ffn_norm;
  FfnCache<S> ffn;
};

template <typename S>
struct EncoderCache {
  std::vector<TokenId> ids;
  std::vector<EncoderLayerCache<S>> layers;
  std::vector<Index> rows_before_pool;  // one entry per pooling step
  NormCache<S> final_norm;
};

template <typename S>
Matrix<S> encode(std::span<const TokenId> ids, const Parameters<S>& p, const ModelConfig& config,
                 EncoderCache<S>* cache) {
  Matrix<S> x = embed<S>(ids, p.token_embedding, p.encoder_position);
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.assign(p.encoder.size(), {});
    cache->rows_before_pool.clear();
  }
  const std::uint32_t per_block = config.layers_per_block();
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& w = p.encoder[l];
    EncoderLayerCache<S>* lc = cache ? &cache->layers[l] : nullptr;
    const Matrix<S> n1 = layer_norm<S>(x, w.attn_norm, lc ? &lc->attn_norm : nullptr);
    x += attention<S>(n1, n1, AttentionMask::none(), w.self_attn, config.num_heads, lc ? &lc->attn : nullptr);
    const Matrix<S> n2 = layer_norm<S>(x, w.ffn_norm, lc ? &lc->ffn_norm : nullptr);
    x += feed_forward<S>(n2, w.ffn, lc ? &lc->ffn : nullptr);
    if (config.funnel_blocks > 0 && (l + 1) % per_block == 0) {
      if (cache) cache->rows_before_pool.push_back(x.rows());
      x = pool_rows<S>(x);
    }
  }
  return layer_norm<S>(x, p.encoder_final_norm, cache ? &cache->final_norm : nullptr);
}

template <typename S>
void encode_backward(const Matrix<S>& d_memory, const EncoderCache<S>& c, const Parameters<S>& p,
                     const ModelConfig& config, Parameters<S>& g) {
  Matrix<S> dx = layer_norm_backward<S>(d_memory, p.encoder_final_norm, c.final_norm, g.encoder_final_norm);
  const std::uint32_t per_block = config.layers_per_block();
  std::size_t pool_index = c.rows_before_pool.size();
  Matrix<S> d_a;
  Matrix<S> d_b;
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    if (config.funnel_blocks > 0 && (l + 1) % per_block == 0) {
      dx = pool_rows_backward<S>(dx, c.rows_before_pool[--pool_index]);
    }
    const auto& w = p.encoder[l];
    auto& gw = g.encoder[l];
    const auto& lc = c.layers[l];
    const Matrix<S> d_n2 = feed_forward_backward<S>(dx, lc.ffn, w.ffn, gw.ffn);
    dx += layer_norm_backward<S>(d_n2, w.ffn_norm, lc.ffn_norm, gw.ffn_norm);
    attention_backward<S>(dx, lc.attn, w.self_attn, gw.self_attn, config.num_heads, d_a, d_b);
    d_a += d_b;
    dx += layer_norm_backward<S>(d_a, w.attn_norm, lc.attn_norm, gw.attn_norm);
  }
  embed_backward<S>(dx, c.ids, g.token_embedding, g.encoder_position);
}

template <typename S>
struct DecoderLayerCache {
  NormCache<S> self_norm;
  AttentionCache<S> self_attn;
  NormCache<S> cross_norm;
  AttentionCache<S> cross_attn;
  NormCache<S> ffn_norm;
  FfnCache<S> ffn;
};

template <typename S>
struct DecoderCache {
  std::vector<TokenId> ids;
  std::vector<DecoderLayerCache<S>> layers;
  NormCache<S> final_norm;
  Matrix<S> final_states;
};

template <typename S>
Matrix<S> decode(std::span<const TokenId> ids, const MatrixRef<S>& memory, std::size_t memory_rows_valid,
                 const Parameters<S>& p, const ModelConfig& config, DecoderCache<S>* cache) {
  Matrix<S> x = embed<S>(ids, p.token_embedding, p.decoder_position);
  if (cache) {
    cache->ids.assign(ids.begin(), ids.end());
    cache->layers.assign(p.decoder.size(), {});
  }
  const AttentionMask cross_mask = AttentionMask::keys(memory_rows_valid);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& w = p.decoder[l];
    DecoderLayerCache<S>* lc = cache ? &cache->layers[l] : nullptr;
    const Matrix<S> n1 = layer_norm<S>(x, w.self_norm, lc ? &lc->self_norm : nullptr);
    x += attention<S>(n1, n1, AttentionMask::causal_mask(), w.self_attn, config.num_heads,
                      lc ? &lc->self_attn : nullptr);
    const Matrix<S> n2 = layer_norm<S>(x, w.cross_norm, lc ? &lc->cross_norm : nullptr);
    x += attention<S>(n2, memory, cross_mask, w.cross_attn, config.num_heads, lc ? &lc->cross_attn : nullptr);
    const Matrix<S> n3 = layer_norm<S>(x, w.ffn_norm, lc ? &lc->ffn_norm : nullptr);
    x += feed_forward<S>(n3, w.ffn, lc ? &lc->ffn : nullptr);
  }
  Matrix<S> y = layer_norm<S>(x, p.decoder_final_norm, cache ? &cache->final_norm : nullptr);
  Matrix<S> logits = y * p.token_embedding.transpose();
  if (cache) cache->final_states = std::move(y);
  return logits;
}

// Accumulates parameter gradients into `g` and returns d loss / d memory.
template <typename S>
Matrix<S> decode_backward(const Matrix<S>& d_logits, const DecoderCache<S>& c, Index memory_rows,
                          const Parameters<S>& p, const ModelConfig& config, Parameters<S>& g) {
  g.token_embedding.noalias() += d_logits.transpose() * c.final_states;
  const Matrix<S> d_y = d_logits * p.token_embedding;
  Matrix<S> dx = layer_norm_backward<S>(d_y, p.decoder_final_norm, c.final_norm, g.decoder_final_norm);
  Matrix<S> d_memory = Matrix<S>::Zero(memory_rows, p.token_embedding.cols());
  Matrix<S> d_a;
  Matrix<S> d_b;
  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    const auto& w = p.decoder[l];
    auto& gw = g.decoder[l];
    const auto& lc = c.layers[l];
    const Matrix<S> d_n3 = feed_forward_backward<S>(dx, lc.ffn, w.ffn, gw.ffn);
    dx += layer_norm_backward<S>(d_n3, w.ffn_norm, lc.ffn_norm, gw.ffn_norm);
    attention_backward<S>(dx, lc.cross_attn, w.cross_attn, gw.cross_attn, config.num_heads, d_a, d_b);
    d_memory += d_b;
    dx += layer_norm_backward<S>(d_a, w.cross_norm, lc.cross_norm, gw.cross_norm);
    attention_backward<S>(dx, lc.self_attn, w.self_attn, gw.self_attn, config.num_heads, d_a, d_b);
    d_a += d_b;
    dx += layer_norm_backward<S>(d_a, w.self_norm, lc.self_norm, gw.self_norm);
  }
  embed_backward<S>(dx, c.ids, g.token_embedding, g.decoder_position);
  return d_memory;
}

}  // namespace ed2lm::detail
