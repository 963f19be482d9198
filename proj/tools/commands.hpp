#pragma once

#include "ed2lm/error.hpp"
#include "manifest.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace ed2lm::cli {

namespace fs = std::filesystem;

// Raised when --out points at a non-empty directory and --force is absent.
class OutputExistsError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "output_exists"; }
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  fs::path out;
  bool force = false;
  std::string log_level = "info";
};

struct SynthOptions {
  std::size_t docs = 500;
  std::size_t queries = 200;
  std::size_t train_queries = 4000;
  std::size_t vocab = 2000;
  double noise = 0.2;
};

// Model architecture flags shared by train and bench.
struct ArchOptions {
  std::uint32_t encoder_layers = 2;
  std::uint32_t decoder_layers = 2;
  std::uint32_t d_model = 64;
  std::uint32_t heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t max_doc_len = 128;
  std::uint32_t max_query_len = 8;
  std::uint32_t funnel_blocks = 0;
};

struct TrainOptions {
  fs::path data;
  fs::path corpus;
  fs::path train_queries;
  fs::path pairs;
  fs::path init;
  ArchOptions arch;
  std::size_t vocab_cap = 32768;
  std::size_t steps = 1000;
  std::size_t batch_size = 128;
  double lr = 2e-3;
  std::string optimizer = "adam";
  std::string loss = "combined";
  std::string target_mode = "ranking";
};

struct EncodeOptions {
  fs::path model;
  fs::path corpus;
};

struct RerankOptions {
  fs::path model;
  fs::path store;
  fs::path queries;
  fs::path run;
  fs::path corpus;  // BM25 first stage when no run is given
  std::size_t depth = 50;
  std::string score = "true_false";
  std::string target_mode = "ranking";
  bool include_eos = false;
};

struct EvalOptions {
  fs::path run;
  fs::path qrels;
  fs::path baseline;
  std::size_t k = 10;
  int relevant_grade = 1;
  int map_grade = 1;
};

struct BenchOptions {
  std::string mode = "both";
  std::string preset = "tiny";
  fs::path model;
  std::uint32_t funnel_blocks = 0;
  std::size_t doc_len = 256;
  std::size_t query_len = 32;
  bool latency = false;
  fs::path corpus;
  fs::path queries;
  std::size_t pairs = 100;
  std::size_t repetitions = 10;
};

struct GenerateOptions {
  fs::path model;
  fs::path store;
  fs::path corpus;
  std::uint32_t k = 10;
  std::uint32_t samples = 1;
  std::uint32_t max_len = 0;
  double temperature = 1.0;
  std::string checkpoint_mode = "generation";
};

struct ExpandOptions {
  fs::path corpus;
  fs::path generated;
  std::size_t n = 1;
};

// Every command writes into g.out and finishes with manifest.json; `config`
// is the effective configuration echoed into it.
void run_synth(const GlobalOptions& g, const SynthOptions& o, const nlohmann::ordered_json& config);
void run_train(const GlobalOptions& g, const TrainOptions& o, const nlohmann::ordered_json& config);
void run_encode(const GlobalOptions& g, const EncodeOptions& o, const nlohmann::ordered_json& config);
void run_rerank(const GlobalOptions& g, const RerankOptions& o, const nlohmann::ordered_json& config);
void run_eval(const GlobalOptions& g, const EvalOptions& o, const nlohmann::ordered_json& config);
void run_bench(const GlobalOptions& g, const BenchOptions& o, const nlohmann::ordered_json& config);
void run_generate(const GlobalOptions& g, const GenerateOptions& o, const nlohmann::ordered_json& config);
void run_expand(const GlobalOptions& g, const ExpandOptions& o, const nlohmann::ordered_json& config);

// Model directory layout written by `train`.
inline constexpr const char* kCheckpointName = "model.ckpt";
inline constexpr const char* kVocabName = "vocab.txt";

}  // namespace ed2lm::cli
