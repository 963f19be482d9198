#include "ed2lm/training.hpp"

#include "ed2lm/error.hpp"
#include "layers.hpp"
#include "text_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace ed2lm {

TokenSequence TargetSequence::decoder_input() const {
  std::vector<TokenId> in;
  in.reserve(ids.size());
  in.push_back(kDecoderStartId);
  in.insert(in.end(), ids.begin(), ids.end() - 1);
  return TokenSequence(std::move(in));
}

TargetSequence make_target(const TokenSequence& query, int label, TargetMode mode) {
  if (label != 0 && label != 1) throw InputError("label must be 0 or 1, got " + std::to_string(label));
  TargetSequence t;
  t.mode = mode;
  t.query_length = query.length;
  const auto q = query.tokens();
  t.ids.assign(q.begin(), q.end());
  if (mode == TargetMode::generation) t.ids.push_back(kEosId);
  t.ids.push_back(label == 1 ? kTrueId : kFalseId);
  t.ids.push_back(kEosId);
  return t;
}

TokenSequence scoring_input(const TokenSequence& query, TargetMode mode) {
  std::vector<TokenId> in;
  in.reserve(query.length + 2);
  in.push_back(kDecoderStartId);
  const auto q = query.tokens();
  in.insert(in.end(), q.begin(), q.end());
  if (mode == TargetMode::generation) in.push_back(kEosId);
  return TokenSequence(std::move(in));
}

namespace {

// log softmax(row)[target] accumulated in double.
template <typename S>
double log_prob(const Matrix<S>& logits, Index row, TokenId target) {
  const auto r = logits.row(row);
  const double peak = static_cast<double>(r.maxCoeff());
  double sum = 0.0;
  for (Index j = 0; j < r.size(); ++j) sum += std::exp(static_cast<double>(r(j)) - peak);
  return static_cast<double>(r(static_cast<Index>(target))) - peak - std::log(sum);
}

// d(-log softmax(row)[target]) / d row = softmax(row) - onehot(target), scaled.
template <typename S>
void add_softmax_grad(const Matrix<S>& logits, Index row, TokenId target, double weight, Matrix<S>& d_logits) {
  const auto r = logits.row(row);
  const double peak = static_cast<double>(r.maxCoeff());
  double sum = 0.0;
  for (Index j = 0; j < r.size(); ++j) sum += std::exp(static_cast<double>(r(j)) - peak);
  for (Index j = 0; j < r.size(); ++j) {
    const double p = std::exp(static_cast<double>(r(j)) - peak) / sum;
    d_logits(row, j) += static_cast<S>(weight * p);
  }
  d_logits(row, static_cast<Index>(target)) -= static_cast<S>(weight);
}

void check_target_fits(Index rows, const TargetSequence& target, std::size_t needed) {
  if (needed > static_cast<std::size_t>(rows)) {
    throw ShapeError("target needs " + std::to_string(needed) + " logit rows, got " + std::to_string(rows));
  }
  if (needed > target.ids.size()) throw ShapeError("target sequence shorter than its declared layout");
}

void validate_example(const TrainingExample& ex, const ModelConfig& config) {
  if (ex.label != 0 && ex.label != 1) throw InputError("label must be 0 or 1");
  if (ex.query.length > config.max_query_len) {
    throw InputError("query of " + std::to_string(ex.query.length) + " tokens exceeds max_query_len " +
                     std::to_string(config.max_query_len));
  }
  if (ex.doc.length > config.max_doc_len) {
    throw InputError("document of " + std::to_string(ex.doc.length) + " tokens exceeds max_doc_len " +
                     std::to_string(config.max_doc_len));
  }
}

// Returns log p for the class token followed by eos, the quantity whose
// negation is loss_ce. Clamped at log(1e-30).
template <typename S>
double class_log_prob(const Matrix<S>& logits, const TargetSequence& target, bool* clamped) {
  const std::size_t cp = target.class_position();
  check_target_fits(logits.rows(), target, cp + 2);
  const double lp = log_prob<S>(logits, static_cast<Index>(cp), target.ids[cp]) +
                    log_prob<S>(logits, static_cast<Index>(cp + 1), target.ids[cp + 1]);
  const double floor = std::log(kProbabilityFloor);
  *clamped = lp < floor;
  return *clamped ? floor : lp;
}

}  // namespace

template <typename S>
double loss_ql(const Matrix<S>& logits, const TargetSequence& target) {
  const std::size_t end = target.likelihood_end();
  check_target_fits(logits.rows(), target, end);
  double loss = 0.0;
  for (std::size_t i = 0; i < end; ++i) loss -= log_prob<S>(logits, static_cast<Index>(i), target.ids[i]);
  return loss;
}

template <typename S>
double loss_ce(const Matrix<S>& logits, int label, const TargetSequence& target) {
  if (label != 0 && label != 1) throw InputError("label must be 0 or 1");
  const TokenId expected = label == 1 ? kTrueId : kFalseId;
  const std::size_t cp = target.class_position();
  if (cp + 1 >= target.ids.size() || target.ids[cp] != expected || target.ids[cp + 1] != kEosId) {
    throw InputError("target does not end with the class token for label " + std::to_string(label) + " and eos");
  }
  bool clamped = false;
  const double lp = class_log_prob<S>(logits, target, &clamped);
  if (clamped) spdlog::warn("class probability below {} clamped in loss_ce", kProbabilityFloor);
  return -lp;
}

template <typename S>
LossBreakdown loss_and_gradient(const TrainingExample& example, const Parameters<S>& params, const ModelConfig& config,
                                LossMode mode, TargetMode target_mode, Parameters<S>* grad, S grad_scale) {
  validate_example(example, config);
  const TargetSequence target = make_target(example.query, example.label, target_mode);
  const TokenSequence input = target.decoder_input();

  detail::EncoderCache<S> enc_cache;
  detail::DecoderCache<S> dec_cache;
  const bool want_grad = grad != nullptr;
  const EncoderOutput<S> memory_out = [&] {
    if (!want_grad) return encoder_forward<S>(example.doc, params, config);
    if (example.doc.length == 0) throw InputError("empty document");
    EncoderOutput<S> m;
    m.matrix = detail::encode<S>(example.doc.tokens(), params, config, &enc_cache);
    m.rows_valid = static_cast<std::size_t>(m.matrix.rows());
    return m;
  }();
  const Matrix<S> logits =
      want_grad ? detail::decode<S>(input.tokens(), memory_out.matrix, memory_out.rows_valid, params, config,
                                    &dec_cache)
                : decoder_forward<S>(input, memory_out, params, config);

  LossBreakdown out;
  out.loss_ql = loss_ql<S>(logits, target);
  bool clamped = false;
  out.loss_ce = -class_log_prob<S>(logits, target, &clamped);
  if (clamped) spdlog::warn("class probability below {} clamped in loss_ce", kProbabilityFloor);
  const double y = example.label;
  double ql_weight = 0.0;
  double ce_weight = 0.0;
  switch (mode) {
    case LossMode::combined:
      ql_weight = y;
      ce_weight = 1.0;
      break;
    case LossMode::ce_only:
      ce_weight = 1.0;
      break;
    case LossMode::ql_only:
      ql_weight = y;
      break;
  }
  // y = 0 must drop the likelihood term entirely, not add 0 * loss.
  out.total = ce_weight * out.loss_ce + (ql_weight != 0.0 ? ql_weight * out.loss_ql : 0.0);

  if (!want_grad) return out;

  Matrix<S> d_logits = Matrix<S>::Zero(logits.rows(), logits.cols());
  const double scale = static_cast<double>(grad_scale);
  if (ql_weight != 0.0) {
    for (std::size_t i = 0; i < target.likelihood_end(); ++i) {
      add_softmax_grad<S>(logits, static_cast<Index>(i), target.ids[i], scale * ql_weight, d_logits);
    }
  }
  if (ce_weight != 0.0 && !clamped) {
    const std::size_t cp = target.class_position();
    add_softmax_grad<S>(logits, static_cast<Index>(cp), target.ids[cp], scale * ce_weight, d_logits);
    add_softmax_grad<S>(logits, static_cast<Index>(cp + 1), target.ids[cp + 1], scale * ce_weight, d_logits);
  }
  const Matrix<S> d_memory =
      detail::decode_backward<S>(d_logits, dec_cache, memory_out.matrix.rows(), params, config, *grad);
  detail::encode_backward<S>(d_memory, enc_cache, params, config, *grad);
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be finite and non-negative");
  }
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
}

namespace {

struct AdamState {
  Parameters<float> first;
  Parameters<float> second;
  std::size_t step = 0;
};

void apply_update(Parameters<float>& params, const Parameters<float>& grad, const TrainConfig& tc, AdamState* adam) {
  auto p = params.tensors();
  const auto g = grad.tensors();
  if (tc.optimizer == Optimizer::sgd) {
    const float lr = static_cast<float>(tc.learning_rate);
    for (std::size_t i = 0; i < p.size(); ++i) *p[i].tensor -= lr * *g[i].tensor;
    return;
  }
  ++adam->step;
  auto m = adam->first.tensors();
  auto v = adam->second.tensors();
  const double t = static_cast<double>(adam->step);
  const float b1 = static_cast<float>(tc.adam_beta1);
  const float b2 = static_cast<float>(tc.adam_beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(tc.adam_beta1, t));
  const float c2 = static_cast<float>(1.0 - std::pow(tc.adam_beta2, t));
  const float lr = static_cast<float>(tc.learning_rate);
  const float eps = static_cast<float>(tc.adam_epsilon);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto gi = g[i].tensor->array();
    auto mi = m[i].tensor->array();
    auto vi = v[i].tensor->array();
    mi = b1 * mi + (1.0f - b1) * gi;
    vi = b2 * vi + (1.0f - b2) * gi.square();
    p[i].tensor->array() -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
  }
}

}  // namespace

TrainResult train(std::span<const TrainingExample> dataset, const TrainConfig& tc, const ModelConfig& config,
                  const Parameters<float>* initial, const StepCallback& on_step) {
  config.validate();
  tc.validate();
  if (dataset.empty()) throw InputError("training dataset is empty");
  for (const auto& ex : dataset) validate_example(ex, config);
  if (tc.loss_mode != LossMode::ce_only &&
      std::none_of(dataset.begin(), dataset.end(), [](const TrainingExample& e) { return e.label == 1; })) {
    throw InputError("loss mode " + to_string(tc.loss_mode) + " needs at least one positive example");
  }

  TrainResult result;
  result.params = initial ? *initial : Parameters<float>::initialize(config);
  result.params.check_shapes(config);
  result.log.reserve(tc.steps);

  AdamState adam;
  if (tc.optimizer == Optimizer::adam) {
    adam.first = Parameters<float>::zeros(config);
    adam.second = Parameters<float>::zeros(config);
  }

  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  Parameters<float> grad = Parameters<float>::zeros(config);
  const std::size_t batch = std::min(tc.batch_size, dataset.size());
  const float scale = 1.0f / static_cast<float>(batch);

  for (std::size_t step = 1; step <= tc.steps; ++step) {
    for (auto& t : grad.tensors()) t.tensor->setZero();
    LossBreakdown mean;
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const LossBreakdown l = loss_and_gradient<float>(dataset[order[cursor++]], result.params, config, tc.loss_mode,
                                                       tc.target_mode, &grad, scale);
      mean.loss_ql += l.loss_ql / static_cast<double>(batch);
      mean.loss_ce += l.loss_ce / static_cast<double>(batch);
      mean.total += l.total / static_cast<double>(batch);
    }
    if (!std::isfinite(mean.total) || !grad.all_finite()) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": loss " + std::to_string(mean.total));
    }
    apply_update(result.params, grad, tc, &adam);
    if (!result.params.all_finite()) {
      throw NumericError("training diverged at step " + std::to_string(step) + ": non-finite parameters");
    }
    result.log.push_back(mean);
    if (on_step) on_step(step, result.params);
  }
  return result;
}

void write_loss_log(std::ostream& out, std::span<const LossBreakdown> log) {
  out << "step,loss_ce,loss_ql,total\n";
  char buf[128];
  for (std::size_t i = 0; i < log.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", i + 1, log[i].loss_ce, log[i].loss_ql, log[i].total);
    out << buf;
  }
}

std::vector<TrainingPair> read_training_pairs(const std::filesystem::path& path) {
  std::vector<TrainingPair> pairs;
  detail::for_each_line(path, [&](std::string_view line, std::size_t n) {
    const auto f = detail::split(line, '\t');
    if (f.size() != 3) throw InputError(detail::where(path, n) + ": expected query_id<TAB>doc_id<TAB>label");
    const int label = detail::parse_int<int>(f[2], detail::where(path, n));
    if (label != 0 && label != 1) throw InputError(detail::where(path, n) + ": label must be 0 or 1");
    pairs.push_back({std::string(f[0]), std::string(f[1]), label});
  });
  return pairs;
}

void write_training_pairs(std::ostream& out, std::span<const TrainingPair> pairs) {
  for (const auto& p : pairs) out << p.query_id << '\t' << p.doc_id << '\t' << p.label << '\n';
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::combined:
      return "combined";
    case LossMode::ce_only:
      return "ce_only";
    case LossMode::ql_only:
      return "ql_only";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "combined") return LossMode::combined;
  if (name == "ce_only") return LossMode::ce_only;
  if (name == "ql_only") return LossMode::ql_only;
  throw ConfigError("unknown loss mode '" + name + "' (combined|ce_only|ql_only)");
}

std::string to_string(TargetMode mode) { return mode == TargetMode::ranking ? "ranking" : "generation"; }

TargetMode parse_target_mode(const std::string& name) {
  if (name == "ranking") return TargetMode::ranking;
  if (name == "generation") return TargetMode::generation;
  throw ConfigError("unknown target mode '" + name + "' (ranking|generation)");
}

std::string to_string(Optimizer optimizer) { return optimizer == Optimizer::sgd ? "sgd" : "adam"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + name + "' (sgd|adam)");
}

template double loss_ql<float>(const Matrix<float>&, const TargetSequence&);
template double loss_ql<double>(const Matrix<double>&, const TargetSequence&);
template double loss_ce<float>(const Matrix<float>&, int, const TargetSequence&);
template double loss_ce<double>(const Matrix<double>&, int, const TargetSequence&);
template LossBreakdown loss_and_gradient<float>(const TrainingExample&, const Parameters<float>&, const ModelConfig&,
                                                LossMode, TargetMode, Parameters<float>*, float);
template LossBreakdown loss_and_gradient<double>(const TrainingExample&, const Parameters<double>&,
                                                 const ModelConfig&, LossMode, TargetMode, Parameters<double>*,
                                                 double);

}  // namespace ed2lm
