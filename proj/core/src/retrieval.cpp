#include "ed2lm/retrieval.hpp"

#include "ed2lm/config.hpp"
#include "ed2lm/error.hpp"
#include "text_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <ostream>

namespace ed2lm {

namespace {

const char* const kSpecialNames[kNumSpecialTokens] = {"<pad>", "<unk>", "<eos>", "<true>", "<false>"};

template <typename Map>
Map read_id_text(const std::filesystem::path& path, const char* what) {
  Map out;
  detail::for_each_line(path, [&](std::string_view line, std::size_t n) {
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw InputError(detail::where(path, n) + ": expected id<TAB>text");
    }
    std::string id(line.substr(0, tab));
    if (!out.emplace(id, std::string(line.substr(tab + 1))).second) {
      throw InputError(detail::where(path, n) + ": duplicate " + what + " id " + id);
    }
  });
  return out;
}

}  // namespace

Corpus read_corpus(const std::filesystem::path& path) {
  return Corpus{read_id_text<std::map<std::string, std::string>>(path, "doc")};
}

QuerySet read_queries(const std::filesystem::path& path) { return read_id_text<QuerySet>(path, "query"); }

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& [id, text] : corpus.docs) out << id << '\t' << text << '\n';
}

void write_queries(std::ostream& out, const QuerySet& queries) {
  for (const auto& [id, text] : queries) out << id << '\t' << text << '\n';
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

// ------------------------------------------------------------------ vocabulary

Vocabulary::Vocabulary() {
  for (const char* name : kSpecialNames) add(name);
}

void Vocabulary::add(std::string word) {
  const auto id = static_cast<TokenId>(words_.size());
  if (!ids_.emplace(word, id).second) throw InputError("duplicate vocabulary entry '" + word + "'");
  words_.push_back(std::move(word));
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t cap) {
  if (cap < kNumSpecialTokens) throw ConfigError("vocabulary cap must leave room for the special tokens");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (auto& [word, count] : ranked) {
    if (v.size() >= cap) break;
    v.add(std::move(word));
  }
  return v;
}

Vocabulary Vocabulary::from_words(std::span<const std::string> words) {
  Vocabulary v;
  for (const auto& w : words) v.add(w);
  return v;
}

TokenId Vocabulary::id(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.contains(std::string(word)); }

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) throw LookupError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::string(detail::strip_cr(line)));
  if (lines.size() < kNumSpecialTokens) throw FormatError("vocabulary file " + path.string() + " lacks specials");
  for (std::size_t i = 0; i < kNumSpecialTokens; ++i) {
    if (lines[i] != kSpecialNames[i]) {
      throw FormatError("vocabulary file " + path.string() + " has '" + lines[i] + "' where " + kSpecialNames[i] +
                        " belongs");
    }
  }
  return from_words(std::span<const std::string>(lines).subspan(kNumSpecialTokens));
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) {
    if (ids.size() >= max_len) break;
    ids.push_back(vocab.id(w));
  }
  return TokenSequence(std::move(ids));
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (const TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

// ----------------------------------------------------------------------- BM25

InvertedIndex InvertedIndex::build(const Corpus& corpus) {
  InvertedIndex index;
  double total = 0.0;
  for (const auto& [id, text] : corpus.docs) {
    const auto doc = static_cast<std::uint32_t>(index.doc_ids_.size());
    index.doc_ids_.push_back(id);
    const auto words = split_words(text);
    index.doc_lengths_.push_back(static_cast<std::uint32_t>(words.size()));
    total += static_cast<double>(words.size());
    for (const auto& w : words) {
      auto& list = index.postings_[w];
      if (!list.empty() && list.back().doc == doc) {
        ++list.back().tf;
      } else {
        list.push_back({doc, 1});
      }
    }
  }
  index.average_length_ = index.doc_ids_.empty() ? 0.0 : total / static_cast<double>(index.doc_ids_.size());
  return index;
}

std::span<const InvertedIndex::Posting> InvertedIndex::postings(std::string_view term) const {
  const auto it = postings_.find(term);
  if (it == postings_.end()) return {};
  return it->second;
}

std::uint32_t InvertedIndex::term_frequency(std::string_view term, std::uint32_t doc) const {
  const auto list = postings(term);
  const auto it =
      std::lower_bound(list.begin(), list.end(), doc, [](const Posting& p, std::uint32_t d) { return p.doc < d; });
  return it != list.end() && it->doc == doc ? it->tf : 0;
}

std::optional<std::uint32_t> InvertedIndex::find_doc(std::string_view doc_id) const {
  const auto it = std::lower_bound(doc_ids_.begin(), doc_ids_.end(), doc_id,
                                   [](const std::string& a, std::string_view b) { return a < b; });
  if (it == doc_ids_.end() || *it != doc_id) return std::nullopt;
  return static_cast<std::uint32_t>(it - doc_ids_.begin());
}

double InvertedIndex::idf(std::string_view term) const {
  const double n = static_cast<double>(doc_ids_.size());
  const double df = static_cast<double>(postings(term).size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

namespace {

double term_weight(double idf, double tf, double doc_len, double avg_len, const Bm25Params& p) {
  const double norm = avg_len > 0.0 ? doc_len / avg_len : 0.0;
  return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

}  // namespace

double bm25_score(std::span<const std::string> query_terms, std::string_view doc_id, const InvertedIndex& index,
                  const Bm25Params& params) {
  const auto doc = index.find_doc(doc_id);
  if (!doc) throw LookupError("doc " + std::string(doc_id) + " not in index");
  double score = 0.0;
  for (const auto& term : query_terms) {
    const std::uint32_t tf = index.term_frequency(term, *doc);
    if (tf == 0) continue;
    score += term_weight(index.idf(term), tf, index.doc_length(*doc), index.average_doc_length(), params);
  }
  return score;
}

std::vector<RankedDoc> retrieve(std::span<const std::string> query_terms, const InvertedIndex& index,
                                std::size_t top_k, const Bm25Params& params) {
  if (top_k == 0) throw InputError("top_k must be at least 1");
  std::vector<double> scores(index.doc_count(), 0.0);
  for (const auto& term : query_terms) {
    const auto list = index.postings(term);
    if (list.empty()) continue;
    const double idf = index.idf(term);
    for (const auto& p : list) {
      scores[p.doc] += term_weight(idf, p.tf, index.doc_length(p.doc), index.average_doc_length(), params);
    }
  }
  std::vector<std::uint32_t> order(index.doc_count());
  for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t k = std::min(top_k, order.size());
  // Doc indices follow ascending doc_id, so the index breaks ties.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; });
  std::vector<RankedDoc> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({index.doc_id(order[i]), scores[order[i]]});
  return out;
}

RankingRun retrieve_run(const QuerySet& queries, const InvertedIndex& index, std::size_t top_k,
                        const Bm25Params& params) {
  RankingRun run;
  for (const auto& [qid, text] : queries) {
    const auto terms = split_words(text);
    run.queries[qid] = retrieve(terms, index, top_k, params);
  }
  return run;
}

Corpus expand_corpus(const Corpus& corpus, const std::map<std::string, std::vector<std::string>>& generated,
                     std::size_t n_expansions) {
  Corpus out = corpus;
  if (n_expansions == 0) return out;
  std::size_t missing = 0;
  for (auto& [id, text] : out.docs) {
    const auto it = generated.find(id);
    if (it == generated.end() || it->second.empty()) {
      ++missing;
      continue;
    }
    const std::size_t n = std::min(n_expansions, it->second.size());
    for (std::size_t i = 0; i < n; ++i) {
      text.push_back(' ');
      text += it->second[i];
    }
  }
  if (missing > 0) spdlog::info("expand_corpus: {} documents had no generated questions and were left unchanged", missing);
  return out;
}

}  // namespace ed2lm
