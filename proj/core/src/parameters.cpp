#include "ed2lm/parameters.hpp"

#include "ed2lm/error.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace ed2lm {

namespace {

std::string layer_prefix(const char* stack, std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s.layer_%02zu.", stack, index);
  return buf;
}

template <typename Tensor, typename Attn>
void append_attention(std::vector<Tensor>& out, const std::string& prefix, Attn& a) {
  out.push_back({prefix + "query", 2, &a.query});
  out.push_back({prefix + "key", 2, &a.key});
  out.push_back({prefix + "value", 2, &a.value});
  out.push_back({prefix + "output", 2, &a.output});
}

template <typename Tensor, typename Ffn>
void append_ffn(std::vector<Tensor>& out, const std::string& prefix, Ffn& f) {
  out.push_back({prefix + "w_in", 2, &f.w_in});
  out.push_back({prefix + "b_in", 1, &f.b_in});
  out.push_back({prefix + "w_out", 2, &f.w_out});
  out.push_back({prefix + "b_out", 1, &f.b_out});
}

// Shared body of the const and mutable `tensors()` overloads.
template <typename Tensor, typename Params>
std::vector<Tensor> collect(Params& p) {
  std::vector<Tensor> out;
  out.push_back({"token_embedding", 2, &p.token_embedding});
  out.push_back({"encoder.position", 2, &p.encoder_position});
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    auto& l = p.encoder[i];
    const std::string pre = layer_prefix("encoder", i);
    out.push_back({pre + "attn_norm", 1, &l.attn_norm});
    append_attention<Tensor>(out, pre + "self_attn.", l.self_attn);
    out.push_back({pre + "ffn_norm", 1, &l.ffn_norm});
    append_ffn<Tensor>(out, pre + "ffn.", l.ffn);
  }
  out.push_back({"encoder.final_norm", 1, &p.encoder_final_norm});
  out.push_back({"decoder.position", 2, &p.decoder_position});
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    auto& l = p.decoder[i];
    const std::string pre = layer_prefix("decoder", i);
    out.push_back({pre + "self_norm", 1, &l.self_norm});
    append_attention<Tensor>(out, pre + "self_attn.", l.self_attn);
    out.push_back({pre + "cross_norm", 1, &l.cross_norm});
    append_attention<Tensor>(out, pre + "cross_attn.", l.cross_attn);
    out.push_back({pre + "ffn_norm", 1, &l.ffn_norm});
    append_ffn<Tensor>(out, pre + "ffn.", l.ffn);
  }
  out.push_back({"decoder.final_norm", 1, &p.decoder_final_norm});
  return out;
}

}  // namespace

std::vector<TensorShape> expected_shapes(const ModelConfig& config) {
  config.validate();
  // Build a shape-only skeleton through the same enumeration as tensors().
  Parameters<float> skeleton;
  skeleton.encoder.resize(config.num_encoder_layers);
  skeleton.decoder.resize(config.num_decoder_layers);
  const Index d = config.d_model;
  const Index ff = config.d_ff;
  std::vector<TensorShape> shapes;
  for (const auto& t : skeleton.tensors()) {
    TensorShape s{t.name, t.rank, 1, d};
    const auto ends_with = [&](const char* suffix) {
      const std::string_view n(t.name), sfx(suffix);
      return n.size() >= sfx.size() && n.substr(n.size() - sfx.size()) == sfx;
    };
    if (t.name == "token_embedding") {
      s.rows = config.vocab_size;
    } else if (t.name == "encoder.position") {
      s.rows = config.encoder_positions();
    } else if (t.name == "decoder.position") {
      s.rows = config.decoder_positions();
    } else if (ends_with("w_in")) {
      s.rows = d;
      s.cols = ff;
    } else if (ends_with("b_in")) {
      s.cols = ff;
    } else if (ends_with("w_out")) {
      s.rows = ff;
    } else if (t.rank == 2) {
      s.rows = d;  // attention projections
    }
    shapes.push_back(std::move(s));
  }
  return shapes;
}

template <typename Scalar>
std::vector<NamedTensor<Scalar>> Parameters<Scalar>::tensors() {
  return collect<NamedTensor<Scalar>>(*this);
}

template <typename Scalar>
std::vector<ConstNamedTensor<Scalar>> Parameters<Scalar>::tensors() const {
  return collect<ConstNamedTensor<Scalar>>(*this);
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros(const ModelConfig& config) {
  const auto shapes = expected_shapes(config);
  Parameters p;
  p.encoder.resize(config.num_encoder_layers);
  p.decoder.resize(config.num_decoder_layers);
  auto slots = p.tensors();
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i].tensor->setZero(shapes[i].rows, shapes[i].cols);
  return p;
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::initialize(const ModelConfig& config) {
  Parameters p = zeros(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double d = config.d_model;
  const double depth = 2.0 * (config.num_encoder_layers + config.num_decoder_layers);
  const auto fill = [&](Matrix<Scalar>& m, double stddev) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(stddev * normal(rng));
  };
  const auto fill_attention = [&](AttentionWeights<Scalar>& a) {
    fill(a.query, 1.0 / std::sqrt(d));
    fill(a.key, 1.0 / std::sqrt(d));
    fill(a.value, 1.0 / std::sqrt(d));
    fill(a.output, 1.0 / std::sqrt(d * depth));
  };
  const auto fill_ffn = [&](FeedForwardWeights<Scalar>& f) {
    fill(f.w_in, 1.0 / std::sqrt(d));
    fill(f.w_out, 1.0 / std::sqrt(static_cast<double>(config.d_ff) * depth));
  };

  fill(p.token_embedding, 1.0 / std::sqrt(d));
  fill(p.encoder_position, 0.5 / std::sqrt(d));
  fill(p.decoder_position, 0.5 / std::sqrt(d));
  for (auto& l : p.encoder) {
    l.attn_norm.setOnes();
    l.ffn_norm.setOnes();
    fill_attention(l.self_attn);
    fill_ffn(l.ffn);
  }
  for (auto& l : p.decoder) {
    l.self_norm.setOnes();
    l.cross_norm.setOnes();
    l.ffn_norm.setOnes();
    fill_attention(l.self_attn);
    fill_attention(l.cross_attn);
    fill_ffn(l.ffn);
  }
  p.encoder_final_norm.setOnes();
  p.decoder_final_norm.setOnes();
  return p;
}

template <typename Scalar>
void Parameters<Scalar>::check_shapes(const ModelConfig& config) const {
  const auto shapes = expected_shapes(config);
  if (encoder.size() != config.num_encoder_layers || decoder.size() != config.num_decoder_layers) {
    throw ConfigError("parameter layer count does not match config");
  }
  const auto slots = tensors();
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& m = *slots[i].tensor;
    if (m.rows() != shapes[i].rows || m.cols() != shapes[i].cols) {
      throw ConfigError("tensor " + slots[i].name + " has shape " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", config requires " + std::to_string(shapes[i].rows) + "x" +
                        std::to_string(shapes[i].cols));
    }
  }
}

template <typename Scalar>
bool Parameters<Scalar>::all_finite() const {
  for (const auto& t : tensors()) {
    if (!t.tensor->allFinite()) return false;
  }
  return true;
}

template <typename Scalar>
std::size_t Parameters<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.tensor->size());
  return n;
}

template struct Parameters<float>;
template struct Parameters<double>;

}  // namespace ed2lm
