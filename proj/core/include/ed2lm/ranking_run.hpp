#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ed2lm {

struct RankedDoc {
  std::string doc_id;
  double score = 0.0;

  friend bool operator==(const RankedDoc&, const RankedDoc&) = default;
};

// query_id -> candidates, best first.
struct RankingRun {
  std::map<std::string, std::vector<RankedDoc>> queries;

  // Throws InputError on duplicate doc ids within a query or increasing scores.
  void validate() const;

  friend bool operator==(const RankingRun&, const RankingRun&) = default;
};

// TREC run format: `qid Q0 docid rank score tag`, rank 1-based, score printed
// with 17 significant digits so it parses back to the same double.
void write_trec_run(std::ostream& out, const RankingRun& run, std::string_view tag);
void write_trec_run(const std::filesystem::path& path, const RankingRun& run, std::string_view tag);
RankingRun read_trec_run(const std::filesystem::path& path);
RankingRun parse_trec_run(std::istream& in, const std::string& source = "<stream>");

// Qrels: (query_id, doc_id) -> grade. TREC format `qid 0 docid grade`.
using Qrels = std::map<std::string, std::map<std::string, int>>;
Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(std::ostream& out, const Qrels& qrels);

}  // namespace ed2lm
