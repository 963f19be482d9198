#include "ed2lm/error.hpp"
#include "ed2lm/model.hpp"
#include "helpers.hpp"
#include "naive_model.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <random>

using namespace ed2lm;
using testing_util::random_tokens;
using testing_util::relative_error;
using testing_util::tiny_config;

namespace {

template <typename S>
AttentionWeights<S> identity_attention(Index d) {
  return {Matrix<S>::Identity(d, d), Matrix<S>::Identity(d, d), Matrix<S>::Identity(d, d), Matrix<S>::Identity(d, d)};
}

Matrix<double> random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void expect_close(const Matrix<double>& got, const naive::Mat& want, double rel) {
  ASSERT_EQ(static_cast<std::size_t>(got.rows()), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    ASSERT_EQ(static_cast<std::size_t>(got.cols()), want[i].size());
    for (std::size_t j = 0; j < want[i].size(); ++j) {
      const double scale = std::max(1.0, std::fabs(want[i][j]));
      EXPECT_LE(std::fabs(got(i, j) - want[i][j]) / scale, rel) << "at (" << i << ", " << j << ")";
    }
  }
}

}  // namespace

TEST(Attention, SinglePositionReturnsItsValue) {
  const Matrix<double> x = Matrix<double>::Constant(1, 1, 1.0);
  const auto out = multihead_attention<double>(x, x, AttentionMask::none(), identity_attention<double>(1), 1);
  ASSERT_EQ(out.rows(), 1);
  EXPECT_DOUBLE_EQ(out(0, 0), 1.0);
}

TEST(Attention, EqualKeysAverageTheValues) {
  // Identity Q/K/V: two identical key rows give equal weights, so the output
  // is the mean of the (identical) value rows; use different value weights
  // to make the average observable.
  AttentionWeights<double> w = identity_attention<double>(2);
  w.key.setZero();  // every key vector is zero -> equal scores
  Matrix<double> q(1, 2);
  q << 0.3, -0.7;
  Matrix<double> kv(2, 2);
  kv << 1.0, 2.0, 3.0, 6.0;
  const auto out = multihead_attention<double>(q, kv, AttentionMask::none(), w, 1);
  EXPECT_NEAR(out(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(out(0, 1), 4.0, 1e-15);
}

TEST(Attention, MatchesNaivePerHeadLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Index d = 6;
    AttentionWeights<double> w{random_matrix(rng, d, d), random_matrix(rng, d, d), random_matrix(rng, d, d),
                               random_matrix(rng, d, d)};
    const Matrix<double> q = random_matrix(rng, 3, d);
    const Matrix<double> kv = random_matrix(rng, 3, d);
    for (const bool causal : {false, true}) {
      const AttentionMask mask = causal ? AttentionMask::causal_mask() : AttentionMask::none();
      const auto got = multihead_attention<double>(q, kv, mask, w, 2);
      const auto want = naive::attention(naive::to_mat(q), naive::to_mat(kv), naive::attn_of(w), 2, causal, 3);
      expect_close(got, want, 1e-12);
    }
    const auto got = multihead_attention<double>(q, kv, AttentionMask::keys(2), w, 3);
    expect_close(got, naive::attention(naive::to_mat(q), naive::to_mat(kv), naive::attn_of(w), 3, false, 2), 1e-12);
  }
}

TEST(Attention, MaskedKeysGetZeroWeight) {
  std::mt19937_64 rng(3);
  const Index d = 4;
  AttentionWeights<double> w{random_matrix(rng, d, d), random_matrix(rng, d, d), random_matrix(rng, d, d),
                             random_matrix(rng, d, d)};
  const Matrix<double> q = random_matrix(rng, 2, d);
  Matrix<double> kv = random_matrix(rng, 4, d);
  const auto before = multihead_attention<double>(q, kv, AttentionMask::keys(2), w, 2);
  kv.bottomRows(2) = random_matrix(rng, 2, d, 100.0);
  const auto after = multihead_attention<double>(q, kv, AttentionMask::keys(2), w, 2);
  EXPECT_TRUE(before == after);
}

TEST(Attention, RejectsBadShapesAndNaN) {
  const auto w = identity_attention<double>(4);
  const Matrix<double> x = Matrix<double>::Ones(2, 4);
  const Matrix<double> narrow = Matrix<double>::Ones(2, 3);
  EXPECT_THROW(multihead_attention<double>(narrow, x, AttentionMask::none(), w, 2), ConfigError);
  EXPECT_THROW(multihead_attention<double>(x, x, AttentionMask::none(), w, 3), ConfigError);
  Matrix<double> bad = x;
  bad(1, 2) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(multihead_attention<double>(bad, x, AttentionMask::none(), w, 2), NumericError);
}

TEST(FunnelPool, AveragesAdjacentPairs) {
  Matrix<double> x(2, 2);
  x << 1, 3, 5, 7;
  const auto p = funnel_pool<double>(x, 2);
  ASSERT_EQ(p.states.rows(), 1);
  EXPECT_EQ(p.states(0, 0), 3);
  EXPECT_EQ(p.states(0, 1), 5);
  EXPECT_EQ(p.valid, 1u);
}

TEST(FunnelPool, OddTrailingRowPassesThrough) {
  Matrix<double> x(3, 2);
  x << 2, 2, 4, 4, 6, 6;
  const auto p = funnel_pool<double>(x, 3);
  ASSERT_EQ(p.states.rows(), 2);
  EXPECT_EQ(p.states(0, 0), 3);
  EXPECT_EQ(p.states(1, 0), 6);
  EXPECT_EQ(p.states(1, 1), 6);
  EXPECT_EQ(p.valid, 2u);
}

TEST(FunnelPool, LengthLaw) {
  Matrix<double> x = Matrix<double>::Ones(256, 2);
  auto once = funnel_pool<double>(x, 256);
  auto twice = funnel_pool<double>(once.states, once.valid);
  EXPECT_EQ(twice.states.rows(), 64);
  EXPECT_EQ(twice.valid, 64u);
  for (std::size_t len = 1; len < 70; ++len) {
    for (std::uint32_t k = 0; k < 5; ++k) {
      const std::size_t want = (len + (std::size_t{1} << k) - 1) >> k;
      EXPECT_EQ(pooled_length(len, k), want);
    }
  }
  EXPECT_THROW(funnel_pool<double>(Matrix<double>(0, 2), 0), InputError);
}

TEST(Encoder, OutputRowsFollowFunnelLaw) {
  ModelConfig c = tiny_config();
  c.max_doc_len = 256;
  std::mt19937_64 rng(1);
  {
    const auto p = Parameters<float>::initialize(c);
    EXPECT_EQ(encoder_forward<float>(random_tokens(rng, 7, c.vocab_size), p, c).matrix.rows(), 7);
  }
  c.funnel_blocks = 2;
  {
    const auto p = Parameters<float>::initialize(c);
    const auto out = encoder_forward<float>(random_tokens(rng, 256, c.vocab_size), p, c);
    EXPECT_EQ(out.matrix.rows(), 64);
    EXPECT_EQ(out.rows_valid, 64u);
  }
  c.num_encoder_layers = 3;
  c.funnel_blocks = 3;
  {
    const auto p = Parameters<float>::initialize(c);
    EXPECT_EQ(encoder_forward<float>(random_tokens(rng, 256, c.vocab_size), p, c).matrix.rows(), 32);
    EXPECT_EQ(encoder_forward<float>(random_tokens(rng, 13, c.vocab_size), p, c).matrix.rows(), 2);
  }
}

TEST(Encoder, RejectsOverlongAndInvalidInput) {
  const ModelConfig c = tiny_config();
  const auto p = Parameters<float>::initialize(c);
  std::mt19937_64 rng(2);
  EXPECT_THROW(encoder_forward<float>(random_tokens(rng, c.max_doc_len + 1, c.vocab_size), p, c), InputError);
  EXPECT_THROW(encoder_forward<float>(TokenSequence(), p, c), InputError);
  EXPECT_THROW(encoder_forward<float>(TokenSequence({5, c.vocab_size}), p, c), InputError);
}

TEST(Encoder, IgnoresPaddingBeyondLength) {
  const ModelConfig c = tiny_config();
  const auto p = Parameters<float>::initialize(c);
  std::mt19937_64 rng(4);
  const TokenSequence doc = random_tokens(rng, 9, c.vocab_size);
  TokenSequence padded(doc.ids, doc.length);
  padded.ids.insert(padded.ids.end(), {0, 0, 0});
  TokenSequence junk(doc.ids, doc.length);
  junk.ids.insert(junk.ids.end(), {7, 8, 9});
  const auto a = encoder_forward<float>(doc, p, c);
  EXPECT_TRUE(a.matrix == encoder_forward<float>(padded, p, c).matrix);
  EXPECT_TRUE(a.matrix == encoder_forward<float>(junk, p, c).matrix);
}

TEST(Decoder, CausalPrefixIsBitIdentical) {
  const ModelConfig c = tiny_config();
  const auto p = Parameters<float>::initialize(c);
  std::mt19937_64 rng(5);
  const auto memory = encoder_forward<float>(random_tokens(rng, 10, c.vocab_size), p, c);
  const TokenSequence q = random_tokens(rng, 6, c.vocab_size);
  const auto base = decoder_forward<float>(q, memory, p, c);
  for (std::size_t t = 0; t < q.length; ++t) {
    TokenSequence changed = q;
    changed.ids[t] = changed.ids[t] == 5 ? 6 : 5;
    const auto logits = decoder_forward<float>(changed, memory, p, c);
    for (Index r = 0; r < static_cast<Index>(t); ++r) EXPECT_TRUE(logits.row(r) == base.row(r)) << "t=" << t;
    if (t + 1 < q.length) EXPECT_FALSE(logits.row(static_cast<Index>(t)) == base.row(static_cast<Index>(t)));
  }
}

TEST(Decoder, RejectsEmptyMemoryAndWrongWidth) {
  const ModelConfig c = tiny_config();
  const auto p = Parameters<float>::initialize(c);
  const TokenSequence q({5, 6});
  EXPECT_THROW(decoder_forward<float>(q, Matrix<float>(0, c.d_model), 0, p, c), InputError);
  EXPECT_THROW(decoder_forward<float>(q, Matrix<float>::Ones(3, c.d_model), 0, p, c), InputError);
  EXPECT_THROW(decoder_forward<float>(q, Matrix<float>::Ones(3, c.d_model + 1), 3, p, c), ConfigError);
  const TokenSequence too_long(std::vector<TokenId>(c.decoder_positions() + 1, 5));
  EXPECT_THROW(decoder_forward<float>(too_long, Matrix<float>::Ones(3, c.d_model), 3, p, c), InputError);
}

TEST(Model, MatchesNaiveLayerByLayerOracle) {
  std::mt19937_64 rng(6);
  for (const std::uint32_t b : {0u, 1u, 2u}) {
    const ModelConfig c = tiny_config(b);
    const auto p = Parameters<double>::initialize(c);
    for (int trial = 0; trial < 4; ++trial) {
      const TokenSequence doc = random_tokens(rng, 5 + 4 * static_cast<std::size_t>(trial), c.vocab_size);
      const TokenSequence q = random_tokens(rng, 1 + static_cast<std::size_t>(trial), c.vocab_size, 0);
      const auto enc = encoder_forward<double>(doc, p, c);
      const naive::Mat want_enc = naive::encode(doc.ids, p, c);
      expect_close(enc.matrix, want_enc, 1e-10);
      const auto logits = decoder_forward<double>(q, enc, p, c);
      expect_close(logits, naive::decode(q.ids, want_enc, p, c), 1e-10);
    }
  }
}

TEST(Model, FloatPathTracksDoubleOracle) {
  const ModelConfig c = tiny_config(1);
  const auto pf = Parameters<float>::initialize(c);
  const auto pd = pf.cast<double>();
  std::mt19937_64 rng(8);
  const TokenSequence doc = random_tokens(rng, 17, c.vocab_size);
  const TokenSequence q = random_tokens(rng, 5, c.vocab_size);
  const auto got = joint_forward<float>(doc, q, pf, c);
  const auto want = naive::decode(q.ids, naive::encode(doc.ids, pd, c), pd, c);
  for (Index i = 0; i < got.rows(); ++i) {
    for (Index j = 0; j < got.cols(); ++j) {
      EXPECT_LE(relative_error(got(i, j), want[i][j]), 1e-4) << i << "," << j;
    }
  }
}

TEST(Model, JointForwardIsEncoderThenDecoder) {
  const ModelConfig c = tiny_config(1);
  const auto p = Parameters<float>::initialize(c);
  std::mt19937_64 rng(9);
  for (int i = 0; i < 20; ++i) {
    const TokenSequence doc = random_tokens(rng, 1 + rng() % c.max_doc_len, c.vocab_size);
    const TokenSequence q = random_tokens(rng, 1 + rng() % c.decoder_positions(), c.vocab_size, 0);
    const auto enc = encoder_forward<float>(doc, p, c);
    EXPECT_TRUE(joint_forward<float>(doc, q, p, c) == decoder_forward<float>(q, enc, p, c));
  }
}

TEST(Model, DeterministicAcrossRuns) {
  const ModelConfig c = tiny_config(2);
  const auto p1 = Parameters<float>::initialize(c);
  const auto p2 = Parameters<float>::initialize(c);
  const TokenSequence doc({5, 6, 7, 8, 9, 10, 11});
  const TokenSequence q({0, 5, 6});
  EXPECT_TRUE(joint_forward<float>(doc, q, p1, c) == joint_forward<float>(doc, q, p2, c));
}

TEST(Model, ShapeLawOverRandomConfigs) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig c;
    c.num_heads = 1 + rng() % 3;
    c.d_model = c.num_heads * (1 + rng() % 4);
    c.d_ff = 1 + rng() % 12;
    c.funnel_blocks = rng() % 3;
    c.num_encoder_layers = c.funnel_blocks == 0 ? 1 + rng() % 3 : c.funnel_blocks * (1 + rng() % 2);
    c.num_decoder_layers = 1 + rng() % 3;
    c.vocab_size = 6 + rng() % 20;
    c.max_doc_len = 1 + rng() % 40;
    c.max_query_len = 1 + rng() % 6;
    c.seed = rng();
    ASSERT_NO_THROW(c.validate());
    const auto p = Parameters<float>::initialize(c);
    EXPECT_NO_THROW(p.check_shapes(c));
    const std::size_t len = 1 + rng() % c.max_doc_len;
    const auto enc = encoder_forward<float>(random_tokens(rng, len, c.vocab_size), p, c);
    EXPECT_EQ(enc.matrix.rows(), static_cast<Index>(pooled_length(len, c.funnel_blocks)));
    EXPECT_EQ(enc.matrix.cols(), static_cast<Index>(c.d_model));
    const std::size_t qlen = 1 + rng() % c.decoder_positions();
    const auto logits = decoder_forward<float>(random_tokens(rng, qlen, c.vocab_size, 0), enc, p, c);
    EXPECT_EQ(logits.rows(), static_cast<Index>(qlen));
    EXPECT_EQ(logits.cols(), static_cast<Index>(c.vocab_size));
  }
}

TEST(Model, FiniteForLargeBoundedParameters) {
  const ModelConfig c = tiny_config(1);
  auto p = Parameters<float>::initialize(c);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(-10.0f, 10.0f);
  for (auto& t : p.tensors()) {
    for (Index i = 0; i < t.tensor->size(); ++i) t.tensor->data()[i] = u(rng);
  }
  const auto logits = joint_forward<float>(random_tokens(rng, 20, c.vocab_size), TokenSequence({0, 5, 6, 7}), p, c);
  EXPECT_TRUE(logits.allFinite());
}

TEST(Config, ValidationCatchesInconsistencies) {
  ModelConfig c = tiny_config();
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(3);  // 2 encoder layers cannot split into 3 blocks
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.vocab_size = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.num_decoder_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(CrossAttentionForward, ScoresConcatenatedInput) {
  const ModelConfig c = tiny_config(1);
  const auto p = Parameters<double>::initialize(c);
  std::mt19937_64 rng(13);
  const TokenSequence doc = random_tokens(rng, c.max_doc_len, c.vocab_size);
  const TokenSequence q = random_tokens(rng, c.max_query_len, c.vocab_size);
  const auto logits = cross_attention_forward<double>(doc, q, p, c);
  ASSERT_EQ(logits.rows(), 1);
  // Oracle: unpooled encoder over doc ++ query, then one decoder step.
  ModelConfig flat = c;
  flat.funnel_blocks = 0;
  std::vector<TokenId> joined = doc.ids;
  joined.insert(joined.end(), q.ids.begin(), q.ids.end());
  const auto want = naive::decode({kDecoderStartId}, naive::encode(joined, p, flat), p, flat);
  expect_close(logits, want, 1e-10);
}
