#include "ed2lm/synth.hpp"

#include "ed2lm/error.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace ed2lm {

void SynthConfig::validate() const {
  if (num_docs == 0 || num_queries == 0) throw ConfigError("synth needs at least one doc and one query");
  if (doc_len_min == 0 || doc_len_min > doc_len_max) throw ConfigError("synth doc length range is empty");
  if (query_len_min == 0 || query_len_min > query_len_max) throw ConfigError("synth query length range is empty");
  if (num_topics == 0 || topic_words == 0) throw ConfigError("synth needs at least one topic word");
  if (vocab_words <= filler_words || vocab_words - filler_words < topic_words) {
    throw ConfigError("synth vocabulary too small for its topic and filler words");
  }
  if (topic_share < 0 || filler_share < 0 || topic_share + filler_share > 1.0) {
    throw ConfigError("synth topic_share + filler_share must lie in [0, 1]");
  }
  if (query_noise < 0 || query_noise > 1) throw ConfigError("synth query_noise must lie in [0, 1]");
  if (num_train_queries > 0 && negatives_per_positive > 0 && negative_pool == 0) {
    throw ConfigError("synth negative_pool must be positive when negatives are requested");
  }
}

namespace {

using Rng = std::mt19937_64;

std::size_t uniform_index(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Pronounceable, unique, purely alphabetic word for every index.
std::string make_word(std::size_t i) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  const std::size_t syllables = consonants.size() * vowels.size();
  const auto syllable = [&](std::size_t s) {
    return std::string{consonants[s / vowels.size()], vowels[s % vowels.size()]};
  };
  std::string w = syllable(i % syllables) + syllable((i / syllables) % syllables);
  std::size_t rest = i / (syllables * syllables);
  while (rest > 0) {
    w += syllable((rest - 1) % syllables);
    rest = (rest - 1) / syllables;
  }
  return w;
}

std::string numbered(char prefix, std::size_t i, std::size_t total) {
  const std::size_t width = std::max<std::size_t>(4, std::to_string(total).size());
  std::string digits = std::to_string(i);
  return std::string(1, prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

SynthDataset synthesize(const SynthConfig& c) {
  c.validate();
  Rng rng(c.seed);
  std::vector<std::string> words(c.vocab_words);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = make_word(i);

  // Topic word lists drawn from the non-filler range.
  std::vector<std::size_t> content(c.vocab_words - c.filler_words);
  std::iota(content.begin(), content.end(), c.filler_words);
  std::vector<std::vector<std::size_t>> topics(c.num_topics);
  for (auto& topic : topics) {
    std::shuffle(content.begin(), content.end(), rng);
    topic.assign(content.begin(), content.begin() + static_cast<std::ptrdiff_t>(c.topic_words));
  }

  SynthDataset data;
  std::vector<std::vector<std::string>> doc_words(c.num_docs);
  std::vector<std::size_t> doc_topic(c.num_docs);
  std::vector<std::string> doc_ids(c.num_docs);
  for (std::size_t d = 0; d < c.num_docs; ++d) {
    doc_topic[d] = uniform_index(rng, c.num_topics);
    const std::size_t len = c.doc_len_min + uniform_index(rng, c.doc_len_max - c.doc_len_min + 1);
    auto& text = doc_words[d];
    for (std::size_t t = 0; t < len; ++t) {
      const double r = uniform01(rng);
      std::size_t w;
      if (r < c.filler_share && c.filler_words > 0) {
        // Squaring skews filler use toward the first few words.
        const double u = uniform01(rng);
        w = static_cast<std::size_t>(u * u * static_cast<double>(c.filler_words));
      } else if (r < c.filler_share + c.topic_share) {
        w = topics[doc_topic[d]][uniform_index(rng, c.topic_words)];
      } else {
        w = c.filler_words + uniform_index(rng, c.vocab_words - c.filler_words);
      }
      text.push_back(words[w]);
    }
    doc_ids[d] = numbered('d', d, c.num_docs);
    data.corpus.docs.emplace(doc_ids[d], join(text));
  }

  const auto make_query = [&](std::size_t d) {
    const auto& text = doc_words[d];
    const std::size_t want = c.query_len_min + uniform_index(rng, c.query_len_max - c.query_len_min + 1);
    const std::size_t len = std::min(want, text.size());
    const std::size_t start = uniform_index(rng, text.size() - len + 1);
    std::vector<std::string> q(text.begin() + static_cast<std::ptrdiff_t>(start),
                               text.begin() + static_cast<std::ptrdiff_t>(start + len));
    for (auto& w : q) {
      if (uniform01(rng) < c.query_noise) w = words[topics[doc_topic[d]][uniform_index(rng, c.topic_words)]];
    }
    return join(q);
  };

  // Evaluation queries target distinct documents while there are enough.
  std::vector<std::size_t> order(c.num_docs);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < c.num_queries; ++i) {
    const std::size_t d = i < order.size() ? order[i] : uniform_index(rng, c.num_docs);
    const std::string qid = numbered('q', i, c.num_queries);
    data.queries.emplace(qid, make_query(d));
    data.qrels[qid][doc_ids[d]] = 1;
  }

  std::vector<std::pair<std::string, std::size_t>> train_targets;
  for (std::size_t i = 0; i < c.num_train_queries; ++i) {
    const std::size_t d = uniform_index(rng, c.num_docs);
    const std::string qid = numbered('t', i, c.num_train_queries);
    data.train_queries.emplace(qid, make_query(d));
    train_targets.emplace_back(qid, d);
  }

  if (!train_targets.empty()) {
    const InvertedIndex index = InvertedIndex::build(data.corpus);
    for (const auto& [qid, d] : train_targets) {
      data.train_pairs.push_back({qid, doc_ids[d], 1});
      if (c.negatives_per_positive == 0) continue;
      const auto terms = split_words(data.train_queries.at(qid));
      std::vector<std::string> pool;
      for (const auto& hit : retrieve(terms, index, c.negative_pool + 1)) {
        if (hit.doc_id != doc_ids[d]) pool.push_back(hit.doc_id);
      }
      pool.resize(std::min(pool.size(), c.negative_pool));
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t n = 0; n < std::min(c.negatives_per_positive, pool.size()); ++n) {
        data.train_pairs.push_back({qid, pool[n], 0});
      }
    }
  }
  return data;
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  const auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw InputError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open(DatasetFiles::corpus);
    write_corpus(out, data.corpus);
  }
  {
    auto out = open(DatasetFiles::queries);
    write_queries(out, data.queries);
  }
  {
    auto out = open(DatasetFiles::qrels);
    write_qrels(out, data.qrels);
  }
  {
    auto out = open(DatasetFiles::train_queries);
    write_queries(out, data.train_queries);
  }
  {
    auto out = open(DatasetFiles::train_pairs);
    write_training_pairs(out, data.train_pairs);
  }
}

SynthDataset read_dataset(const std::filesystem::path& dir) {
  SynthDataset data;
  data.corpus = read_corpus(dir / DatasetFiles::corpus);
  data.queries = read_queries(dir / DatasetFiles::queries);
  data.qrels = read_qrels(dir / DatasetFiles::qrels);
  data.train_queries = read_queries(dir / DatasetFiles::train_queries);
  data.train_pairs = read_training_pairs(dir / DatasetFiles::train_pairs);
  return data;
}

std::vector<TrainingExample> make_training_examples(std::span<const TrainingPair> pairs, const Corpus& corpus,
                                                    const QuerySet& queries, const Vocabulary& vocab,
                                                    const ModelConfig& config) {
  std::vector<TrainingExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto doc = corpus.docs.find(p.doc_id);
    if (doc == corpus.docs.end()) throw LookupError("training pair references unknown doc " + p.doc_id);
    const auto query = queries.find(p.query_id);
    if (query == queries.end()) throw LookupError("training pair references unknown query " + p.query_id);
    TrainingExample ex;
    ex.doc = tokenize(doc->second, vocab, config.max_doc_len);
    ex.query = tokenize(query->second, vocab, config.max_query_len);
    ex.label = p.label;
    if (ex.doc.empty()) throw InputError("doc " + p.doc_id + " has no tokens");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace ed2lm
