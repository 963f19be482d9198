#pragma once

#include "ed2lm/ranking_run.hpp"
#include "ed2lm/retrieval.hpp"
#include "ed2lm/training.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace ed2lm {

// Knobs for the synthetic retrieval collection. Documents mix topic words,
// a small set of frequent filler words and uniformly drawn rare words, so
// neighbouring documents share vocabulary and BM25 is good but not perfect.
// Every query is a contiguous span of one document with some of its words
// swapped for words of the same topic.
struct SynthConfig {
  std::size_t num_docs = 500;
  std::size_t num_queries = 200;        // evaluation queries, judged in qrels
  std::size_t num_train_queries = 400;  // disjoint ids, used for train.tsv
  std::size_t vocab_words = 2000;
  std::size_t num_topics = 20;
  std::size_t topic_words = 40;
  std::size_t filler_words = 30;
  std::size_t doc_len_min = 32;
  std::size_t doc_len_max = 128;
  std::size_t query_len_min = 4;
  std::size_t query_len_max = 8;
  double topic_share = 0.45;
  double filler_share = 0.25;
  double query_noise = 0.2;
  std::size_t negatives_per_positive = 1;
  std::size_t negative_pool = 10;  // hard negatives come from this BM25 depth
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthDataset {
  Corpus corpus;
  QuerySet queries;
  Qrels qrels;
  QuerySet train_queries;
  std::vector<TrainingPair> train_pairs;
};

SynthDataset synthesize(const SynthConfig& config);

// File names used inside a dataset directory.
struct DatasetFiles {
  static constexpr const char* corpus = "corpus.tsv";
  static constexpr const char* queries = "queries.tsv";
  static constexpr const char* qrels = "qrels.txt";
  static constexpr const char* train_queries = "train_queries.tsv";
  static constexpr const char* train_pairs = "train.tsv";
};

// Writes every file in DatasetFiles into `dir` (which must exist).
void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);
SynthDataset read_dataset(const std::filesystem::path& dir);

// Resolves (query_id, doc_id, label) rows against texts and tokenizes both
// sides, truncating to the model's maxima.
std::vector<TrainingExample> make_training_examples(std::span<const TrainingPair> pairs, const Corpus& corpus,
                                                    const QuerySet& queries, const Vocabulary& vocab,
                                                    const ModelConfig& config);

}  // namespace ed2lm
