#include "ed2lm/error.hpp"
#include "ed2lm/training.hpp"
#include "helpers.hpp"
#include "naive_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

using namespace ed2lm;
using testing_util::random_tokens;
using testing_util::tiny_config;

namespace {

// Logits for `rows` positions whose softmax over `vocab` puts exactly the
// probabilities in `probs[row]` on the listed tokens and spreads the rest
// evenly over the remaining ones.
Matrix<double> logits_with(std::size_t vocab, const std::vector<std::map<TokenId, double>>& probs) {
  Matrix<double> out(static_cast<Index>(probs.size()), static_cast<Index>(vocab));
  for (std::size_t r = 0; r < probs.size(); ++r) {
    double assigned = 0.0;
    for (const auto& [t, p] : probs[r]) assigned += p;
    const double rest = (1.0 - assigned) / static_cast<double>(vocab - probs[r].size());
    for (std::size_t v = 0; v < vocab; ++v) {
      const auto it = probs[r].find(static_cast<TokenId>(v));
      const double p = it == probs[r].end() ? rest : it->second;
      out(static_cast<Index>(r), static_cast<Index>(v)) = std::log(std::max(p, 1e-300));
    }
  }
  return out;
}

TrainingExample random_example(std::mt19937_64& rng, const ModelConfig& c, int label, std::size_t doc_len = 6,
                               std::size_t query_len = 3) {
  return {random_tokens(rng, doc_len, c.vocab_size), random_tokens(rng, query_len, c.vocab_size), label};
}

// Scalar-loop oracle for the losses straight from the naive model.
LossBreakdown oracle_losses(const TrainingExample& ex, const Parameters<double>& p, const ModelConfig& c,
                            TargetMode mode) {
  const TargetSequence t = make_target(ex.query, ex.label, mode);
  const TokenSequence in = t.decoder_input();
  const auto logits = naive::decode(in.ids, naive::encode(ex.doc.ids, p, c), p, c);
  LossBreakdown b;
  for (std::size_t i = 0; i < t.likelihood_end(); ++i) b.loss_ql += naive::nll(logits[i], t.ids[i]);
  const std::size_t cp = t.class_position();
  b.loss_ce = naive::nll(logits[cp], t.ids[cp]) + naive::nll(logits[cp + 1], t.ids[cp + 1]);
  b.total = b.loss_ce + ex.label * b.loss_ql;
  return b;
}

double total_loss(const TrainingExample& ex, const Parameters<double>& p, const ModelConfig& c, LossMode mode,
                  TargetMode target) {
  return loss_and_gradient<double>(ex, p, c, mode, target, nullptr).total;
}

}  // namespace

TEST(Target, RankingAndGenerationLayouts) {
  const TokenSequence q({7, 8, 9});
  const auto r = make_target(q, 1, TargetMode::ranking);
  EXPECT_EQ(r.ids, (std::vector<TokenId>{7, 8, 9, kTrueId, kEosId}));
  EXPECT_EQ(r.class_position(), 3u);
  const auto g = make_target(q, 0, TargetMode::generation);
  EXPECT_EQ(g.ids, (std::vector<TokenId>{7, 8, 9, kEosId, kFalseId, kEosId}));
  EXPECT_EQ(g.class_position(), 4u);
  EXPECT_EQ(g.decoder_input().ids, (std::vector<TokenId>{kDecoderStartId, 7, 8, 9, kEosId, kFalseId}));
  EXPECT_EQ(scoring_input(q, TargetMode::ranking).ids, (std::vector<TokenId>{kDecoderStartId, 7, 8, 9}));
  EXPECT_EQ(scoring_input(q, TargetMode::generation).ids, (std::vector<TokenId>{kDecoderStartId, 7, 8, 9, kEosId}));
  EXPECT_THROW(make_target(q, 2, TargetMode::ranking), InputError);
}

TEST(LossQl, UniformLogitsGiveLogVocab) {
  const TargetSequence t = make_target(TokenSequence({3}), 1, TargetMode::ranking);
  const Matrix<double> logits = Matrix<double>::Zero(3, 4);
  EXPECT_NEAR(loss_ql<double>(logits, t), std::log(4.0), 1e-15);
}

TEST(LossQl, DominantCorrectLogitsDriveLossToZero) {
  const TargetSequence t = make_target(TokenSequence({5, 6}), 1, TargetMode::ranking);
  Matrix<double> logits = Matrix<double>::Zero(4, 8);
  logits(0, 5) = 1e4;
  logits(1, 6) = 1e4;
  EXPECT_EQ(loss_ql<double>(logits, t), 0.0);
}

TEST(LossQl, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const TokenSequence q = random_tokens(rng, 3, 11);
    const TargetSequence t = make_target(q, 1, TargetMode::ranking);
    Matrix<double> logits(5, 11);
    for (Index i = 0; i < logits.size(); ++i) logits.data()[i] = n(rng);
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      double z = 0.0;
      for (Index v = 0; v < 11; ++v) z += std::exp(logits(static_cast<Index>(i), v));
      want -= std::log(std::exp(logits(static_cast<Index>(i), q.ids[i])) / z);
    }
    EXPECT_NEAR(loss_ql<double>(logits, t), want, 1e-10);
  }
}

TEST(LossQl, RejectsTooFewRows) {
  const TargetSequence t = make_target(TokenSequence({5, 6, 7}), 1, TargetMode::ranking);
  EXPECT_THROW(loss_ql<double>(Matrix<double>::Zero(2, 8), t), ShapeError);
}

TEST(LossCe, WorkedExamples) {
  const std::size_t vocab = 9;
  const TargetSequence pos = make_target(TokenSequence({6}), 1, TargetMode::ranking);
  const TargetSequence neg = make_target(TokenSequence({6}), 0, TargetMode::ranking);
  // y=1, P(TRUE)=0.5, P(eos|TRUE)=1 -> ln 2
  auto logits = logits_with(vocab, {{}, {{kTrueId, 0.5}}, {{kEosId, 1.0}}});
  EXPECT_NEAR(loss_ce<double>(logits, 1, pos), std::log(2.0), 1e-12);
  // y=0, P(FALSE, eos)=1 -> 0
  logits = logits_with(vocab, {{}, {{kFalseId, 1.0}}, {{kEosId, 1.0}}});
  EXPECT_NEAR(loss_ce<double>(logits, 0, neg), 0.0, 1e-12);
  // y=1, P(TRUE)=0.3, P(eos|TRUE)=0.9 -> -ln 0.27
  logits = logits_with(vocab, {{}, {{kTrueId, 0.3}}, {{kEosId, 0.9}}});
  EXPECT_NEAR(loss_ce<double>(logits, 1, pos), -std::log(0.27), 1e-12);
  EXPECT_NEAR(-std::log(0.27), 1.3093333, 1e-6);
}

TEST(LossCe, ClampsVanishingProbability) {
  const TargetSequence pos = make_target(TokenSequence({6}), 1, TargetMode::ranking);
  Matrix<double> logits = Matrix<double>::Zero(3, 9);
  logits(1, kFalseId) = 1e4;
  EXPECT_NEAR(loss_ce<double>(logits, 1, pos), -std::log(kProbabilityFloor), 1e-9);
}

TEST(LossCe, RejectsMismatchedTarget) {
  const TargetSequence pos = make_target(TokenSequence({6}), 1, TargetMode::ranking);
  EXPECT_THROW(loss_ce<double>(Matrix<double>::Zero(3, 9), 0, pos), InputError);
}

TEST(CombinedLoss, MatchesOracleAndEquation) {
  const ModelConfig c = tiny_config(1);
  const auto p = Parameters<double>::initialize(c);
  std::mt19937_64 rng(22);
  for (const TargetMode mode : {TargetMode::ranking, TargetMode::generation}) {
    for (const int y : {0, 1}) {
      const auto ex = random_example(rng, c, y, 9, 4);
      const auto got = combined_loss<double>(ex, p, c, mode);
      const auto want = oracle_losses(ex, p, c, mode);
      EXPECT_NEAR(got.loss_ql, want.loss_ql, 1e-10);
      EXPECT_NEAR(got.loss_ce, want.loss_ce, 1e-10);
      EXPECT_NEAR(got.total, want.total, 1e-10);
      EXPECT_GE(got.loss_ql, 0.0);
      EXPECT_GE(got.loss_ce, 0.0);
      if (y == 0) EXPECT_EQ(got.total, got.loss_ce);
      if (y == 1) EXPECT_EQ(got.total, got.loss_ce + got.loss_ql);
    }
  }
}

TEST(Gradient, NegativeExamplesIgnoreQueryLikelihood) {
  const ModelConfig c = tiny_config();
  const auto p = Parameters<double>::initialize(c);
  std::mt19937_64 rng(23);
  const auto ex = random_example(rng, c, 0);
  auto g_combined = Parameters<double>::zeros(c);
  auto g_ce = Parameters<double>::zeros(c);
  auto g_ql = Parameters<double>::zeros(c);
  loss_and_gradient<double>(ex, p, c, LossMode::combined, TargetMode::ranking, &g_combined);
  loss_and_gradient<double>(ex, p, c, LossMode::ce_only, TargetMode::ranking, &g_ce);
  const auto ql = loss_and_gradient<double>(ex, p, c, LossMode::ql_only, TargetMode::ranking, &g_ql);
  EXPECT_EQ(ql.total, 0.0);
  const auto a = g_combined.tensors();
  const auto b = g_ce.tensors();
  const auto z = g_ql.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(*a[i].tensor == *b[i].tensor) << a[i].name;
    EXPECT_TRUE(z[i].tensor->isZero(0.0)) << z[i].name;
  }
}

// Central differences in double on every tensor, a few entries each.
TEST(Gradient, MatchesFiniteDifferencesForAllModes) {
  const ModelConfig c = tiny_config(1);
  const auto p = Parameters<double>::initialize(c);
  std::mt19937_64 rng(24);
  for (const LossMode mode : {LossMode::combined, LossMode::ce_only, LossMode::ql_only}) {
    for (const TargetMode target : {TargetMode::ranking, TargetMode::generation}) {
      const auto ex = random_example(rng, c, 1, 7, 3);
      auto grad = Parameters<double>::zeros(c);
      loss_and_gradient<double>(ex, p, c, mode, target, &grad);
      auto probe = p;
      auto slots = probe.tensors();
      const auto gslots = grad.tensors();
      for (std::size_t s = 0; s < slots.size(); ++s) {
        Matrix<double>& m = *slots[s].tensor;
        for (int k = 0; k < 2; ++k) {
          const Index idx = static_cast<Index>(rng() % static_cast<std::uint64_t>(m.size()));
          const double analytic = gslots[s].tensor->data()[idx];
          const double orig = m.data()[idx];
          const double h = 1e-5;
          m.data()[idx] = orig + h;
          const double xp = m.data()[idx];
          const double up = total_loss(ex, probe, c, mode, target);
          m.data()[idx] = orig - h;
          const double xm = m.data()[idx];
          const double down = total_loss(ex, probe, c, mode, target);
          m.data()[idx] = orig;
          const double numeric = (up - down) / (xp - xm);
          if (std::fabs(analytic) < 1e-8 && std::fabs(numeric) < 1e-8) continue;
          EXPECT_NEAR(analytic, numeric, 1e-5 * std::max(std::fabs(analytic), 1e-3))
              << to_string(mode) << "/" << to_string(target) << " " << slots[s].name << "[" << idx << "]";
        }
      }
    }
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(25);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_example(rng, c, i % 2));
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.steps = 5;
  tc.batch_size = 4;
  const auto init = Parameters<float>::initialize(c);
  for (const Optimizer opt : {Optimizer::sgd, Optimizer::adam}) {
    tc.optimizer = opt;
    const auto result = train(data, tc, c, &init);
    EXPECT_EQ(serialize_checkpoint(c, result.params), serialize_checkpoint(c, init));
    EXPECT_EQ(result.log.size(), 5u);
  }
}

TEST(Train, LossDecreasesOnSeparableSet) {
  ModelConfig c = tiny_config();
  c.vocab_size = 40;
  c.max_doc_len = 12;
  std::mt19937_64 rng(26);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 25; ++i) {
    const TokenSequence doc = random_tokens(rng, 10, c.vocab_size);
    const std::size_t start = rng() % 6;
    TokenSequence q(std::vector<TokenId>(doc.ids.begin() + static_cast<std::ptrdiff_t>(start),
                                         doc.ids.begin() + static_cast<std::ptrdiff_t>(start + 4)));
    data.push_back({doc, q, 1});
    data.push_back({random_tokens(rng, 10, c.vocab_size), q, 0});
  }
  TrainConfig tc;
  tc.steps = 300;
  tc.batch_size = 8;
  tc.learning_rate = 0.05;
  const auto result = train(data, tc, c);
  double first = 0.0;
  double last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    first += result.log[i].total;
    last += result.log[result.log.size() - 1 - i].total;
  }
  EXPECT_LT(last, first);
}

TEST(Train, DeterministicForFixedSeed) {
  const ModelConfig c = tiny_config(1);
  std::mt19937_64 rng(27);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 10; ++i) data.push_back(random_example(rng, c, i % 2));
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 3;
  tc.optimizer = Optimizer::adam;
  tc.seed = 5;
  const auto a = train(data, tc, c);
  const auto b = train(data, tc, c);
  EXPECT_EQ(serialize_checkpoint(c, a.params), serialize_checkpoint(c, b.params));
  std::ostringstream la;
  std::ostringstream lb;
  write_loss_log(la, a.log);
  write_loss_log(lb, b.log);
  EXPECT_EQ(la.str(), lb.str());
  EXPECT_EQ(la.str().substr(0, 27), "step,loss_ce,loss_ql,total\n");
}

TEST(Train, ValidatesInputs) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(28);
  TrainConfig tc;
  EXPECT_THROW(train({}, tc, c), InputError);
  std::vector<TrainingExample> negatives{random_example(rng, c, 0)};
  EXPECT_THROW(train(negatives, tc, c), InputError);
  tc.loss_mode = LossMode::ce_only;
  tc.steps = 1;
  EXPECT_NO_THROW(train(negatives, tc, c));
  tc.steps = 0;
  EXPECT_THROW(train(negatives, tc, c), ConfigError);
  std::vector<TrainingExample> long_query{random_example(rng, c, 1, 4, c.max_query_len + 1)};
  tc.steps = 1;
  EXPECT_THROW(train(long_query, tc, c), InputError);
}

TEST(Train, DivergenceAborts) {
  const ModelConfig c = tiny_config();
  std::mt19937_64 rng(29);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 4; ++i) data.push_back(random_example(rng, c, 1));
  TrainConfig tc;
  tc.learning_rate = 1e30;
  tc.steps = 50;
  tc.batch_size = 4;
  EXPECT_THROW(train(data, tc, c), NumericError);
}

TEST(TrainingPairs, TsvRoundTrip) {
  testing_util::TempDir dir;
  const std::vector<TrainingPair> pairs{{"q1", "d1", 1}, {"q1", "d7", 0}, {"q2", "d3", 1}};
  {
    std::ofstream out(dir / "train.tsv");
    write_training_pairs(out, pairs);
  }
  const auto back = read_training_pairs(dir / "train.tsv");
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].query_id, pairs[i].query_id);
    EXPECT_EQ(back[i].doc_id, pairs[i].doc_id);
    EXPECT_EQ(back[i].label, pairs[i].label);
  }
  {
    std::ofstream out(dir / "bad.tsv");
    out << "q1\td1\t3\n";
  }
  EXPECT_THROW(read_training_pairs(dir / "bad.tsv"), InputError);
}

TEST(Enums, RoundTripNames) {
  for (const LossMode m : {LossMode::combined, LossMode::ce_only, LossMode::ql_only}) {
    EXPECT_EQ(parse_loss_mode(to_string(m)), m);
  }
  for (const TargetMode m : {TargetMode::ranking, TargetMode::generation}) {
    EXPECT_EQ(parse_target_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_loss_mode("mle"), ConfigError);
}
