#include "ed2lm/ranking_run.hpp"

#include "ed2lm/error.hpp"
#include "text_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace ed2lm {

void RankingRun::validate() const {
  for (const auto& [qid, docs] : queries) {
    std::set<std::string_view> seen;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (!seen.insert(docs[i].doc_id).second) {
        throw InputError("run query " + qid + " lists doc " + docs[i].doc_id + " twice");
      }
      if (i > 0 && docs[i].score > docs[i - 1].score) {
        throw InputError("run query " + qid + " has increasing score at rank " + std::to_string(i + 1));
      }
    }
  }
}

void write_trec_run(std::ostream& out, const RankingRun& run, std::string_view tag) {
  char score[64];
  for (const auto& [qid, docs] : run.queries) {
    for (std::size_t i = 0; i < docs.size(); ++i) {
      std::snprintf(score, sizeof(score), "%.17g", docs[i].score);
      out << qid << " Q0 " << docs[i].doc_id << ' ' << (i + 1) << ' ' << score << ' ' << tag << '\n';
    }
  }
}

void write_trec_run(const std::filesystem::path& path, const RankingRun& run, std::string_view tag) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_trec_run(out, run, tag);
}

RankingRun parse_trec_run(std::istream& in, const std::string& source) {
  struct Row {
    long rank;
    RankedDoc doc;
  };
  std::map<std::string, std::vector<Row>> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto f = detail::split_whitespace(line);
    if (f.empty()) continue;
    const std::string ctx = source + ":" + std::to_string(n);
    if (f.size() != 6) throw InputError(ctx + ": expected `qid Q0 docid rank score tag`");
    rows[std::string(f[0])].push_back(
        {detail::parse_int<long>(f[3], ctx), {std::string(f[2]), detail::parse_double(f[4], ctx)}});
  }
  RankingRun run;
  for (auto& [qid, list] : rows) {
    std::stable_sort(list.begin(), list.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
    auto& docs = run.queries[qid];
    docs.reserve(list.size());
    std::set<std::string> seen;
    for (auto& r : list) {
      if (!seen.insert(r.doc.doc_id).second) {
        throw InputError(source + ": query " + qid + " lists doc " + r.doc.doc_id + " twice");
      }
      docs.push_back(std::move(r.doc));
    }
  }
  return run;
}

RankingRun read_trec_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_trec_run(in, path.string());
}

Qrels read_qrels(const std::filesystem::path& path) {
  Qrels qrels;
  detail::for_each_line(path, [&](std::string_view line, std::size_t n) {
    const auto f = detail::split_whitespace(line);
    if (f.empty()) return;
    const std::string ctx = detail::where(path, n);
    if (f.size() != 4) throw InputError(ctx + ": expected `qid 0 docid grade`");
    const int grade = detail::parse_int<int>(f[3], ctx);
    if (grade < 0) throw InputError(ctx + ": negative relevance grade");
    qrels[std::string(f[0])][std::string(f[2])] = grade;
  });
  return qrels;
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [qid, docs] : qrels) {
    for (const auto& [doc, grade] : docs) out << qid << " 0 " << doc << ' ' << grade << '\n';
  }
}

}  // namespace ed2lm
