#pragma once

#include "ed2lm/model.hpp"
#include "ed2lm/ranking_run.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ed2lm {

// doc_id -> raw text, iterated in ascending doc_id order.
struct Corpus {
  std::map<std::string, std::string> docs;
};

// query_id -> raw text
using QuerySet = std::map<std::string, std::string>;

// `id \t text` per line; used for both corpus and query files.
Corpus read_corpus(const std::filesystem::path& path);
QuerySet read_queries(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const Corpus& corpus);
void write_queries(std::ostream& out, const QuerySet& queries);

// Lowercased maximal runs of ASCII letters and digits.
std::vector<std::string> split_words(std::string_view text);

// Specials occupy ids 0..4; corpus words follow by descending frequency,
// ties broken alphabetically.
class Vocabulary {
 public:
  static constexpr std::size_t kDefaultCap = 32768;

  Vocabulary();
  static Vocabulary build(std::span<const std::string> texts, std::size_t cap = kDefaultCap);
  // `words` are assigned ids 5, 6, ... in order.
  static Vocabulary from_words(std::span<const std::string> words);

  TokenId id(std::string_view word) const;  // UNK when absent
  bool contains(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }

  // One token per line, line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void add(std::string word);
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

// lowercase, split on non-alphanumeric runs, map through `vocab` with UNK
// fallback, keep at most `max_len` tokens.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab,
                       std::size_t max_len = std::numeric_limits<std::size_t>::max());

// Space-joined words; special ids render as <pad>, <unk>, <eos>, <true>, <false>.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

class InvertedIndex {
 public:
  struct Posting {
    std::uint32_t doc;  // index into doc_ids(), ascending
    std::uint32_t tf;
    friend bool operator==(const Posting&, const Posting&) = default;
  };

  static InvertedIndex build(const Corpus& corpus);

  // Empty span when the term does not occur.
  std::span<const Posting> postings(std::string_view term) const;
  std::uint32_t term_frequency(std::string_view term, std::uint32_t doc) const;
  std::size_t doc_count() const { return doc_ids_.size(); }
  std::uint32_t doc_length(std::uint32_t doc) const { return doc_lengths_[doc]; }
  double average_doc_length() const { return average_length_; }
  const std::string& doc_id(std::uint32_t doc) const { return doc_ids_[doc]; }
  std::optional<std::uint32_t> find_doc(std::string_view doc_id) const;
  // ln((N - df + 0.5) / (df + 0.5) + 1)
  double idf(std::string_view term) const;
  std::size_t term_count() const { return postings_.size(); }

  friend bool operator==(const InvertedIndex&, const InvertedIndex&) = default;

 private:
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  double average_length_ = 0.0;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
};

double bm25_score(std::span<const std::string> query_terms, std::string_view doc_id, const InvertedIndex& index,
                  const Bm25Params& params = {});

// Exact top-k by BM25, ties by ascending doc_id. Documents that match no
// term score 0 and still fill the list when top_k exceeds the matches.
std::vector<RankedDoc> retrieve(std::span<const std::string> query_terms, const InvertedIndex& index,
                                std::size_t top_k, const Bm25Params& params = {});

RankingRun retrieve_run(const QuerySet& queries, const InvertedIndex& index, std::size_t top_k,
                        const Bm25Params& params = {});

// Appends up to `n_expansions` generated questions to each document's text.
Corpus expand_corpus(const Corpus& corpus, const std::map<std::string, std::vector<std::string>>& generated,
                     std::size_t n_expansions);

}  // namespace ed2lm
