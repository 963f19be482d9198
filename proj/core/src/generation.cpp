#include "ed2lm/generation.hpp"

#include "ed2lm/error.hpp"
#include "ed2lm/memstore.hpp"
#include "ed2lm/retrieval.hpp"
#include "text_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>
#include <unordered_set>

namespace ed2lm {

void GenerationConfig::validate(const ModelConfig& config) const {
  if (k == 0 || k > config.vocab_size) {
    throw ConfigError("top-k must lie in [1, vocab_size=" + std::to_string(config.vocab_size) + "], got " +
                      std::to_string(k));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (num_samples == 0) throw ConfigError("num_samples must be at least 1");
  const std::uint32_t len = effective_max_len(config);
  // The start token plus len - 1 fed-back tokens must fit the position table.
  if (len > config.decoder_positions()) {
    throw ConfigError("max_len " + std::to_string(len) + " exceeds the decoder's " +
                      std::to_string(config.decoder_positions()) + " positions");
  }
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

namespace {

template <typename S>
std::vector<TokenId> support_of(std::span<const S> logits, std::uint32_t k) {
  if (k == 0) throw ConfigError("top-k needs k >= 1");
  if (logits.empty()) throw InputError("top-k sampling over an empty logit row");
  for (const S v : logits) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite logit in top-k sampling");
  }
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), TokenId{0});
  const std::size_t kk = std::min<std::size_t>(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                    [&](TokenId a, TokenId b) { return logits[a] != logits[b] ? logits[a] > logits[b] : a < b; });
  order.resize(kk);
  return order;
}

template <typename S>
TokenId sample_impl(std::span<const S> logits, std::uint32_t k, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const auto support = support_of<S>(logits, k);
  if (support.size() == 1) return support.front();
  const double peak = static_cast<double>(logits[support.front()]);
  std::vector<double> weights(support.size());
  double total = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    weights[i] = std::exp((static_cast<double>(logits[support[i]]) - peak) / temperature);
    total += weights[i];
  }
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < support.size(); ++i) {
    acc += weights[i];
    if (u < acc) return support[i];
  }
  return support.back();
}

}  // namespace

TokenId topk_sample(std::span<const float> logits, std::uint32_t k, double temperature, Rng& rng) {
  return sample_impl<float>(logits, k, temperature, rng);
}

TokenId topk_sample(std::span<const double> logits, std::uint32_t k, double temperature, Rng& rng) {
  return sample_impl<double>(logits, k, temperature, rng);
}

std::vector<TokenId> topk_support(std::span<const float> logits, std::uint32_t k) {
  return support_of<float>(logits, k);
}

std::uint64_t document_seed(std::uint64_t seed, std::string_view doc_id) {
  // FNV-1a over the id, then a splitmix64 finalizer to mix in the seed.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : doc_id) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = h ^ (seed + 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::vector<TokenId>> generate_questions(const MatrixRef<float>& memory, std::size_t rows_valid,
                                                     const Parameters<float>& params, const ModelConfig& config,
                                                     const GenerationConfig& gen, Rng& rng) {
  gen.validate(config);
  const std::uint32_t max_len = gen.effective_max_len(config);
  std::vector<std::vector<TokenId>> samples;
  samples.reserve(gen.num_samples);
  for (std::uint32_t s = 0; s < gen.num_samples; ++s) {
    std::vector<TokenId> input{kDecoderStartId};
    std::vector<TokenId> question;
    for (std::uint32_t step = 0; step < max_len; ++step) {
      const Matrix<float> logits = decoder_forward<float>(TokenSequence(input), memory, rows_valid, params, config);
      const auto last = logits.row(logits.rows() - 1);
      const TokenId next = topk_sample(std::span<const float>(last.data(), static_cast<std::size_t>(last.size())),
                                       gen.k, gen.temperature, rng);
      if (next == kEosId) break;
      if (next >= kNumSpecialTokens) question.push_back(next);
      input.push_back(next);
    }
    samples.push_back(std::move(question));
  }
  return samples;
}

std::vector<std::vector<TokenId>> generate_questions(const TokenSequence& doc, std::string_view doc_id,
                                                     const Parameters<float>& params, const ModelConfig& config,
                                                     const GenerationConfig& gen) {
  const EncoderOutput<float> memory = encoder_forward<float>(doc, params, config);
  Rng rng(document_seed(gen.seed, doc_id));
  return generate_questions(memory.matrix, memory.rows_valid, params, config, gen, rng);
}

std::map<std::string, std::vector<std::string>> generate_for_store(const MemoryStore& store,
                                                                   const Parameters<float>& params,
                                                                   const ModelConfig& config,
                                                                   const GenerationConfig& gen,
                                                                   const Vocabulary& vocab, std::size_t threads) {
  gen.validate(config);
  if (gen.checkpoint_mode == TargetMode::ranking) {
    spdlog::warn("generating from a ranking-mode checkpoint; questions may not terminate with eos");
  }
  const auto entries = store.entries();
  std::vector<std::vector<std::string>> out(entries.size());
  const auto run_one = [&](std::size_t i) {
    const auto memory = store.lookup(entries[i].doc_id);
    Rng rng(document_seed(gen.seed, entries[i].doc_id));
    for (const auto& q : generate_questions(memory, entries[i].rows_valid, params, config, gen, rng)) {
      out[i].push_back(detokenize(q, vocab));
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, entries.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < entries.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < entries.size(); i = next++) {
          try {
            run_one(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::map<std::string, std::vector<std::string>> result;
  for (std::size_t i = 0; i < entries.size(); ++i) result.emplace(entries[i].doc_id, std::move(out[i]));
  return result;
}

double overlap_rate(std::span<const std::vector<TokenId>> questions, std::span<const TokenId> paragraph) {
  const std::unordered_set<TokenId> vocab(paragraph.begin(), paragraph.end());
  double sum = 0.0;
  std::size_t counted = 0;
  std::size_t skipped = 0;
  for (const auto& q : questions) {
    if (q.empty()) {
      ++skipped;
      continue;
    }
    const auto hits = std::count_if(q.begin(), q.end(), [&](TokenId t) { return vocab.contains(t); });
    sum += static_cast<double>(hits) / static_cast<double>(q.size());
    ++counted;
  }
  if (counted == 0) throw InputError("overlap_rate needs at least one non-empty question");
  if (skipped > 0) spdlog::warn("overlap_rate: skipped {} empty questions", skipped);
  return sum / static_cast<double>(counted);
}

void write_generated(std::ostream& out, const std::map<std::string, std::vector<std::string>>& generated) {
  for (const auto& [doc, questions] : generated) {
    for (std::size_t i = 0; i < questions.size(); ++i) out << doc << '\t' << i << '\t' << questions[i] << '\n';
  }
}

std::map<std::string, std::vector<std::string>> read_generated(const std::filesystem::path& path) {
  std::map<std::string, std::map<std::size_t, std::string>> rows;
  detail::for_each_line(path, [&](std::string_view line, std::size_t n) {
    const auto f = detail::split(line, '\t');
    const std::string ctx = detail::where(path, n);
    if (f.size() != 3) throw InputError(ctx + ": expected doc_id<TAB>sample_index<TAB>question");
    const auto index = detail::parse_int<std::size_t>(f[1], ctx);
    if (!rows[std::string(f[0])].emplace(index, std::string(f[2])).second) {
      throw InputError(ctx + ": duplicate sample index for doc " + std::string(f[0]));
    }
  });
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [doc, samples] : rows) {
    auto& list = out[doc];
    for (auto& [i, text] : samples) list.push_back(std::move(text));
  }
  return out;
}

}  // namespace ed2lm
