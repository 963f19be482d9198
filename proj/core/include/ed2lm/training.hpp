#pragma once

#include "ed2lm/config.hpp"
#include "ed2lm/model.hpp"
#include "ed2lm/parameters.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

// ranking:    q_1 .. q_n CLASS EOS
// generation: q_1 .. q_n EOS CLASS EOS
enum class TargetMode { ranking, generation };

enum class LossMode { combined, ce_only, ql_only };

enum class Optimizer { sgd, adam };

struct TrainingExample {
  TokenSequence doc;
  TokenSequence query;
  int label = 0;
};

struct TargetSequence {
  std::vector<TokenId> ids;
  TargetMode mode = TargetMode::ranking;
  std::size_t query_length = 0;

  // Target positions [0, likelihood_end()) are scored by the query-likelihood loss.
  // In generation mode this includes the eos that terminates the question.
  std::size_t likelihood_end() const { return mode == TargetMode::ranking ? query_length : query_length + 1; }
  std::size_t class_position() const { return likelihood_end(); }
  TokenId class_token() const { return ids[class_position()]; }

  // Teacher-forced decoder input: start token, then the target shifted right.
  TokenSequence decoder_input() const;
};

TargetSequence make_target(const TokenSequence& query, int label, TargetMode mode);

// Decoder input whose last position predicts the class token.
TokenSequence scoring_input(const TokenSequence& query, TargetMode mode);

struct LossBreakdown {
  double loss_ql = 0.0;
  double loss_ce = 0.0;
  double total = 0.0;
};

// Sum over query positions of -log P(q_i | q_<i; d), in nats.
template <typename Scalar>
double loss_ql(const Matrix<Scalar>& logits, const TargetSequence& target);

// -y log p+ - (1-y) log p-, with p = P(class) * P(eos | class). Probabilities
// below 1e-30 are clamped there and a warning is logged.
template <typename Scalar>
double loss_ce(const Matrix<Scalar>& logits, int label, const TargetSequence& target);

inline constexpr double kProbabilityFloor = 1e-30;

// Forward pass, loss, and (when `grad` is non-null) gradients scaled by
// `grad_scale` accumulated into `grad`.
template <typename Scalar>
LossBreakdown loss_and_gradient(const TrainingExample& example, const Parameters<Scalar>& params,
                                const ModelConfig& config, LossMode mode, TargetMode target_mode,
                                Parameters<Scalar>* grad, Scalar grad_scale = Scalar(1));

// loss_ce + y * loss_ql for one example.
template <typename Scalar>
LossBreakdown combined_loss(const TrainingExample& example, const Parameters<Scalar>& params,
                            const ModelConfig& config, TargetMode target_mode = TargetMode::ranking) {
  return loss_and_gradient<Scalar>(example, params, config, LossMode::combined, target_mode, nullptr);
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t steps = 100;
  LossMode loss_mode = LossMode::combined;
  TargetMode target_mode = TargetMode::ranking;
  Optimizer optimizer = Optimizer::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  Parameters<float> params;
  std::vector<LossBreakdown> log;  // batch-mean losses, one per step
};

// Called after every optimizer step with the 1-based step number.
using StepCallback = std::function<void(std::size_t step, const Parameters<float>& params)>;

// Mini-batch training with teacher forcing. Deterministic for a fixed seed.
TrainResult train(std::span<const TrainingExample> dataset, const TrainConfig& train_config,
                  const ModelConfig& model_config, const Parameters<float>* initial = nullptr,
                  const StepCallback& on_step = {});

// CSV: step,loss_ce,loss_ql,total (steps are 1-based).
void write_loss_log(std::ostream& out, std::span<const LossBreakdown> log);

// TSV training pairs: query_id \t doc_id \t label
struct TrainingPair {
  std::string query_id;
  std::string doc_id;
  int label = 0;
};
std::vector<TrainingPair> read_training_pairs(const std::filesystem::path& path);
void write_training_pairs(std::ostream& out, std::span<const TrainingPair> pairs);

std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& name);
std::string to_string(TargetMode mode);
TargetMode parse_target_mode(const std::string& name);
std::string to_string(Optimizer optimizer);
Optimizer parse_optimizer(const std::string& name);

}  // namespace ed2lm
