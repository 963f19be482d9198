#include "ed2lm/memstore.hpp"

#include "binary_io.hpp"
#include "ed2lm/error.hpp"
#include "ed2lm/retrieval.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace ed2lm {

namespace {

constexpr std::string_view kStoreMagic = "ED2LMMS1";
constexpr std::uint8_t kDtypeF32 = 0;

template <typename S>
double log_softmax_at(const Matrix<S>& logits, Index row, TokenId token) {
  const auto r = logits.row(row);
  const double peak = static_cast<double>(r.maxCoeff());
  double sum = 0.0;
  for (Index j = 0; j < r.size(); ++j) sum += std::exp(static_cast<double>(r(j)) - peak);
  return static_cast<double>(r(static_cast<Index>(token))) - peak - std::log(sum);
}

TokenSequence with_token(const TokenSequence& input, TokenId token) {
  std::vector<TokenId> ids(input.tokens().begin(), input.tokens().end());
  ids.push_back(token);
  return TokenSequence(std::move(ids));
}

// `forward` maps a decoder input to its logits; the two scoring paths differ
// only in how they obtain them.
template <typename S, typename Forward>
double score_with(const TokenSequence& query, const ModelConfig& config, const ScoreOptions& options,
                  Forward&& forward) {
  if (query.length > config.max_query_len) {
    throw InputError("query of " + std::to_string(query.length) + " tokens exceeds max_query_len " +
                     std::to_string(config.max_query_len));
  }
  const TokenSequence input = scoring_input(query, options.target_mode);
  if (options.kind == ScoreKind::query_likelihood) {
    if (query.length == 0) throw InputError("query-likelihood score of an empty query");
    const Matrix<S> logits = forward(input);
    const auto q = query.tokens();
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) total += log_softmax_at<S>(logits, static_cast<Index>(i), q[i]);
    return std::exp(total / static_cast<double>(q.size()));
  }

  const Matrix<S> logits = forward(input);
  const Index cp = static_cast<Index>(input.length) - 1;
  if (!options.include_eos) {
    return two_way_score(static_cast<double>(logits(cp, kTrueId)), static_cast<double>(logits(cp, kFalseId)));
  }
  const Matrix<S> after_true = forward(with_token(input, kTrueId));
  const Matrix<S> after_false = forward(with_token(input, kFalseId));
  const double lp_true = log_softmax_at<S>(logits, cp, kTrueId) + log_softmax_at<S>(after_true, cp + 1, kEosId);
  const double lp_false = log_softmax_at<S>(logits, cp, kFalseId) + log_softmax_at<S>(after_false, cp + 1, kEosId);
  return two_way_score(lp_true, lp_false);
}

}  // namespace

std::string to_string(ScoreKind kind) {
  return kind == ScoreKind::true_false ? "true_false" : "query_likelihood";
}

ScoreKind parse_score_kind(const std::string& name) {
  if (name == "true_false") return ScoreKind::true_false;
  if (name == "query_likelihood") return ScoreKind::query_likelihood;
  throw ConfigError("unknown score kind '" + name + "' (expected true_false or query_likelihood)");
}

double two_way_score(double logit_true, double logit_false) {
  const double diff = logit_true - logit_false;
  if (diff >= 0) return 1.0 / (1.0 + std::exp(-diff));
  const double e = std::exp(diff);
  return e / (1.0 + e);
}

template <typename S>
double score_against_memory(const TokenSequence& query, const MatrixRef<S>& memory, std::size_t rows_valid,
                            const Parameters<S>& params, const ModelConfig& config, const ScoreOptions& options) {
  return score_with<S>(query, config, options, [&](const TokenSequence& input) {
    return decoder_forward<S>(input, memory, rows_valid, params, config);
  });
}

template <typename S>
double joint_score(const TokenSequence& doc, const TokenSequence& query, const Parameters<S>& params,
                   const ModelConfig& config, const ScoreOptions& options) {
  return score_with<S>(query, config, options, [&](const TokenSequence& input) {
    return joint_forward<S>(doc, input, params, config);
  });
}

template double score_against_memory<float>(const TokenSequence&, const MatrixRef<float>&, std::size_t,
                                            const Parameters<float>&, const ModelConfig&, const ScoreOptions&);
template double score_against_memory<double>(const TokenSequence&, const MatrixRef<double>&, std::size_t,
                                             const Parameters<double>&, const ModelConfig&, const ScoreOptions&);
template double joint_score<float>(const TokenSequence&, const TokenSequence&, const Parameters<float>&,
                                   const ModelConfig&, const ScoreOptions&);
template double joint_score<double>(const TokenSequence&, const TokenSequence&, const Parameters<double>&,
                                    const ModelConfig&, const ScoreOptions&);

// ------------------------------------------------------------------ the store

bool MemoryStore::contains(std::string_view doc_id) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), doc_id,
                                   [](const Entry& e, std::string_view id) { return e.doc_id < id; });
  return it != entries_.end() && it->doc_id == doc_id;
}

const MemoryStore::Entry& MemoryStore::entry(std::string_view doc_id) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), doc_id,
                                   [](const Entry& e, std::string_view id) { return e.doc_id < id; });
  if (it == entries_.end() || it->doc_id != doc_id) {
    throw LookupError("doc " + std::string(doc_id) + " not in memory store");
  }
  return *it;
}

MatrixMap<float> MemoryStore::lookup(std::string_view doc_id) const {
  const Entry& e = entry(doc_id);
  return MatrixMap<float>(payload_.data() + e.offset / sizeof(float), static_cast<Index>(e.rows_valid),
                          static_cast<Index>(d_model_));
}

std::vector<std::uint8_t> MemoryStore::serialize() const {
  std::vector<std::uint8_t> out;
  detail::ByteWriter w(out);
  w.bytes(kStoreMagic);
  w.u32(d_model_);
  w.u32(funnel_blocks_);
  w.u8(kDtypeF32);
  w.u64(entries_.size());
  for (const auto& e : entries_) {
    w.u16(static_cast<std::uint16_t>(e.doc_id.size()));
    w.bytes(e.doc_id);
    w.u64(e.offset);
    w.u32(e.rows_valid);
  }
  out.reserve(out.size() + payload_.size() * sizeof(float));
  for (const float v : payload_) w.f32(v);
  return out;
}

MemoryStore MemoryStore::deserialize(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  detail::expect_magic(r, kStoreMagic, "memory store");
  MemoryStore s;
  s.d_model_ = r.u32();
  s.funnel_blocks_ = r.u32();
  const std::uint8_t dtype = r.u8();
  if (dtype != kDtypeF32) throw FormatError("memory store dtype tag " + std::to_string(dtype) + " is not f32 (0)");
  if (s.d_model_ == 0) throw FormatError("memory store declares d_model 0");
  const std::uint64_t count = r.u64();
  // Each index entry takes at least 14 bytes; reject absurd counts before allocating.
  if (count > r.remaining() / 14) throw FormatError("memory store index is truncated");
  s.entries_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry e;
    e.doc_id = r.bytes(r.u16());
    e.offset = r.u64();
    e.rows_valid = r.u32();
    if (!s.entries_.empty() && !(s.entries_.back().doc_id < e.doc_id)) {
      throw FormatError("memory store index is not sorted by unique doc id at " + e.doc_id);
    }
    s.entries_.push_back(std::move(e));
  }
  if (r.remaining() % sizeof(float) != 0) throw FormatError("memory store payload is not a whole number of f32");
  s.payload_.resize(r.remaining() / sizeof(float));
  r.f32s(s.payload_);
  const std::uint64_t payload_bytes = s.payload_.size() * sizeof(float);
  const std::uint64_t row_bytes = std::uint64_t{s.d_model_} * sizeof(float);
  for (const auto& e : s.entries_) {
    if (e.rows_valid == 0) throw FormatError("memory store entry " + e.doc_id + " has no rows");
    if (e.offset % sizeof(float) != 0 || e.offset > payload_bytes ||
        (payload_bytes - e.offset) / row_bytes < e.rows_valid) {
      throw FormatError("memory store entry " + e.doc_id + " points outside the payload");
    }
  }
  for (const float v : s.payload_) {
    if (!std::isfinite(v)) throw FormatError("memory store payload contains non-finite values");
  }
  return s;
}

void MemoryStore::save(const std::filesystem::path& path) const { detail::write_file_bytes(path, serialize()); }

MemoryStore MemoryStore::load(const std::filesystem::path& path) {
  return deserialize(detail::read_file_bytes(path));
}

MemoryStoreBuilder::MemoryStoreBuilder(std::uint32_t d_model, std::uint32_t funnel_blocks) {
  if (d_model == 0) throw ConfigError("memory store needs d_model > 0");
  store_.d_model_ = d_model;
  store_.funnel_blocks_ = funnel_blocks;
}

void MemoryStoreBuilder::add(const EncoderOutput<float>& output) {
  if (output.matrix.cols() != static_cast<Index>(store_.d_model_)) {
    throw ShapeError("encoder output for " + output.doc_id + " has width " + std::to_string(output.matrix.cols()));
  }
  if (output.rows_valid == 0 || output.rows_valid > static_cast<std::size_t>(output.matrix.rows())) {
    throw ShapeError("encoder output for " + output.doc_id + " has inconsistent rows_valid");
  }
  if (output.doc_id.empty() || output.doc_id.size() > 0xFFFF) {
    throw InputError("doc id '" + output.doc_id.substr(0, 32) + "' must be 1..65535 bytes");
  }
  MemoryStore::Entry e;
  e.doc_id = output.doc_id;
  e.offset = store_.payload_.size() * sizeof(float);
  e.rows_valid = static_cast<std::uint32_t>(output.rows_valid);
  const auto valid = output.matrix.topRows(static_cast<Index>(output.rows_valid));
  store_.payload_.insert(store_.payload_.end(), valid.data(), valid.data() + valid.size());
  store_.entries_.push_back(std::move(e));
}

MemoryStore MemoryStoreBuilder::finish() && {
  auto& entries = store_.entries_;
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });
  for (std::size_t i = 1; i < entries.size(); ++i) {
    if (entries[i].doc_id == entries[i - 1].doc_id) throw InputError("doc " + entries[i].doc_id + " added twice");
  }
  return std::move(store_);
}

MemoryStore build_store(const std::map<std::string, TokenSequence>& docs, const Parameters<float>& params,
                        const ModelConfig& config) {
  if (docs.empty()) throw InputError("cannot build a memory store from an empty corpus");
  MemoryStoreBuilder builder(config.d_model, config.funnel_blocks);
  std::size_t truncated = 0;
  for (const auto& [id, doc] : docs) {
    if (doc.empty()) throw InputError("doc " + id + " has no tokens");
    EncoderOutput<float> out;
    if (doc.length > config.max_doc_len) {
      ++truncated;
      TokenSequence cut(std::vector<TokenId>(doc.ids.begin(), doc.ids.begin() + config.max_doc_len));
      out = encoder_forward<float>(cut, params, config);
    } else {
      out = encoder_forward<float>(doc, params, config);
    }
    out.doc_id = id;
    builder.add(out);
  }
  if (truncated > 0) {
    spdlog::warn("build_store: truncated {} documents to max_doc_len {}", truncated, config.max_doc_len);
  }
  return std::move(builder).finish();
}

MemoryStore build_store(const Corpus& corpus, const Vocabulary& vocab, const Parameters<float>& params,
                        const ModelConfig& config) {
  std::map<std::string, TokenSequence> docs;
  for (const auto& [id, text] : corpus.docs) docs.emplace(id, tokenize(text, vocab));
  return build_store(docs, params, config);
}

PairScore score_pair(const TokenSequence& query, std::string_view doc_id, const MemoryStore& store,
                     const Parameters<float>& params, const ModelConfig& config, const ScoreOptions& options) {
  if (store.d_model() != config.d_model || store.funnel_blocks() != config.funnel_blocks) {
    throw ConfigError("memory store was built for d_model " + std::to_string(store.d_model()) + ", b=" +
                      std::to_string(store.funnel_blocks()) + " but the model has d_model " +
                      std::to_string(config.d_model) + ", b=" + std::to_string(config.funnel_blocks));
  }
  const auto memory = store.lookup(doc_id);
  PairScore s;
  s.doc_id = std::string(doc_id);
  s.score = score_against_memory<float>(query, memory, static_cast<std::size_t>(memory.rows()), params, config,
                                        options);
  return s;
}

void sort_by_score(std::vector<RankedDoc>& docs) {
  std::sort(docs.begin(), docs.end(), [](const RankedDoc& a, const RankedDoc& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
}

RankingRun rerank(const RankingRun& run_in, const QuerySet& queries, const Vocabulary& vocab,
                  const MemoryStore& store, const Parameters<float>& params, const ModelConfig& config,
                  std::size_t depth, const ScoreOptions& options, std::size_t threads) {
  if (depth == 0) return run_in;

  std::set<std::string> missing_docs;
  std::vector<std::string> missing_queries;
  for (const auto& [qid, docs] : run_in.queries) {
    if (!queries.contains(qid)) missing_queries.push_back(qid);
    const std::size_t n = std::min(depth, docs.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!store.contains(docs[i].doc_id)) missing_docs.insert(docs[i].doc_id);
    }
  }
  if (!missing_queries.empty()) {
    throw LookupError("run references " + std::to_string(missing_queries.size()) +
                      " queries without text, first: " + missing_queries.front());
  }
  if (!missing_docs.empty()) {
    std::string list;
    std::size_t shown = 0;
    for (const auto& id : missing_docs) {
      if (shown++ == 20) {
        list += " ...";
        break;
      }
      list += (list.empty() ? "" : " ") + id;
    }
    throw LookupError(std::to_string(missing_docs.size()) + " candidate docs missing from the memory store: " + list);
  }

  std::vector<const std::string*> qids;
  for (const auto& [qid, docs] : run_in.queries) qids.push_back(&qid);
  std::vector<std::vector<RankedDoc>> results(qids.size());

  const auto rerank_one = [&](std::size_t qi) {
    const auto& docs = run_in.queries.at(*qids[qi]);
    const TokenSequence query = tokenize(queries.at(*qids[qi]), vocab, config.max_query_len);
    const std::size_t n = std::min(depth, docs.size());
    std::vector<RankedDoc> head;
    head.reserve(docs.size());
    for (std::size_t i = 0; i < n; ++i) {
      head.push_back({docs[i].doc_id, score_pair(query, docs[i].doc_id, store, params, config, options).score});
    }
    sort_by_score(head);
    if (n < docs.size()) {
      const double floor = head.empty() ? 0.0 : head.back().score;
      for (std::size_t i = n; i < docs.size(); ++i) {
        head.push_back({docs[i].doc_id, floor - static_cast<double>(i - n + 1)});
      }
    }
    results[qi] = std::move(head);
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, qids.size()));
  if (workers == 1) {
    for (std::size_t qi = 0; qi < qids.size(); ++qi) rerank_one(qi);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t qi = next++; qi < qids.size(); qi = next++) {
          try {
            rerank_one(qi);
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

  RankingRun out;
  for (std::size_t qi = 0; qi < qids.size(); ++qi) out.queries[*qids[qi]] = std::move(results[qi]);
  return out;
}

}  // namespace ed2lm
