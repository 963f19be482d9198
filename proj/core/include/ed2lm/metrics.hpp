#pragma once

#include "ed2lm/ranking_run.hpp"

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ed2lm {

// Per-query values and their macro mean, for one metric.
struct EvalReport {
  std::string metric;
  std::map<std::string, double> per_query;
  double mean = 0.0;
  std::size_t query_count = 0;
};

// What to do with a run query that has no judgments at all.
enum class UnjudgedQueries { count_as_zero, exclude };

// Reciprocal rank of the first doc with grade >= relevant_grade within the top k.
EvalReport mrr_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k = 10, int relevant_grade = 1,
                    UnjudgedQueries unjudged = UnjudgedQueries::count_as_zero);

enum class GainKind { exponential, linear };

// DCG@k with (2^g - 1) / log2(i + 1); normalised by the ideal ordering of all
// judged docs. Queries with zero ideal DCG score 0.
EvalReport ndcg_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k = 10,
                     GainKind gain = GainKind::exponential);

// Average precision with grades >= relevant_grade treated as relevant
// (TREC passage convention maps 2 and 3 to relevant).
EvalReport map_binary(const RankingRun& run, const Qrels& qrels, int relevant_grade = 2);

// 1 if any relevant doc is in the top k. Stored as a fraction; multiply by
// 100 for percentage reporting.
EvalReport hits_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k, int relevant_grade = 1);

// Recall of relevant docs within the top k, averaged over queries.
EvalReport recall_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k, int relevant_grade = 1);

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 1.0;
  bool degenerate = false;  // zero variance with non-zero mean difference
};

// Paired two-tailed Student t-test over aligned per-query values.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

// Aligns two reports on their common query ids before testing.
TTestResult paired_ttest(const EvalReport& a, const EvalReport& b);

// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

// `metric \t query_id|all \t value`
void write_eval_report(std::ostream& out, const EvalReport& report, bool per_query = true);
// `t \t df \t p`
void write_ttest(std::ostream& out, const TTestResult& result);

}  // namespace ed2lm
