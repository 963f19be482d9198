#include "ed2lm/metrics.hpp"

#include "ed2lm/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace ed2lm {

namespace {

const std::map<std::string, int>* judgments(const Qrels& qrels, const std::string& qid) {
  const auto it = qrels.find(qid);
  return it == qrels.end() ? nullptr : &it->second;
}

int grade_of(const std::map<std::string, int>* judged, const std::string& doc) {
  if (!judged) return 0;
  const auto it = judged->find(doc);
  return it == judged->end() ? 0 : it->second;
}

void finish(EvalReport& r) {
  r.query_count = r.per_query.size();
  double sum = 0.0;
  for (const auto& [qid, v] : r.per_query) sum += v;
  r.mean = r.query_count == 0 ? 0.0 : sum / static_cast<double>(r.query_count);
}

std::string with_k(const char* name, std::size_t k) { return std::string(name) + "@" + std::to_string(k); }

}  // namespace

EvalReport mrr_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k, int relevant_grade,
                    UnjudgedQueries unjudged) {
  if (k == 0) throw InputError("mrr cutoff k must be at least 1");
  EvalReport r;
  r.metric = with_k("mrr", k);
  for (const auto& [qid, docs] : run.queries) {
    const auto* judged = judgments(qrels, qid);
    if (!judged && unjudged == UnjudgedQueries::exclude) continue;
    double value = 0.0;
    const std::size_t depth = std::min(k, docs.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (grade_of(judged, docs[i].doc_id) >= relevant_grade) {
        value = 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
    r.per_query[qid] = value;
  }
  finish(r);
  return r;
}

EvalReport ndcg_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k, GainKind gain) {
  if (k == 0) throw InputError("ndcg cutoff k must be at least 1");
  const auto gain_of = [gain](int g) { return gain == GainKind::exponential ? std::exp2(g) - 1.0 : double(g); };
  EvalReport r;
  r.metric = with_k("ndcg", k);
  for (const auto& [qid, docs] : run.queries) {
    const auto* judged = judgments(qrels, qid);
    double dcg = 0.0;
    const std::size_t depth = std::min(k, docs.size());
    for (std::size_t i = 0; i < depth; ++i) {
      dcg += gain_of(grade_of(judged, docs[i].doc_id)) / std::log2(static_cast<double>(i) + 2.0);
    }
    std::vector<int> ideal;
    if (judged) {
      for (const auto& [doc, g] : *judged) ideal.push_back(g);
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
      idcg += gain_of(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
    }
    r.per_query[qid] = idcg > 0.0 ? dcg / idcg : 0.0;
  }
  finish(r);
  return r;
}

EvalReport map_binary(const RankingRun& run, const Qrels& qrels, int relevant_grade) {
  EvalReport r;
  r.metric = "map";
  for (const auto& [qid, docs] : run.queries) {
    const auto* judged = judgments(qrels, qid);
    std::size_t total_relevant = 0;
    if (judged) {
      for (const auto& [doc, g] : *judged) total_relevant += g >= relevant_grade ? 1 : 0;
    }
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (grade_of(judged, docs[i].doc_id) >= relevant_grade) {
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(i + 1);
      }
    }
    r.per_query[qid] = total_relevant == 0 ? 0.0 : sum / static_cast<double>(total_relevant);
  }
  finish(r);
  return r;
}

EvalReport hits_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k, int relevant_grade) {
  if (k == 0) throw InputError("hits cutoff k must be at least 1");
  EvalReport r;
  r.metric = with_k("hits", k);
  for (const auto& [qid, docs] : run.queries) {
    const auto* judged = judgments(qrels, qid);
    const std::size_t depth = std::min(k, docs.size());
    const bool hit = std::any_of(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(depth),
                                 [&](const RankedDoc& d) { return grade_of(judged, d.doc_id) >= relevant_grade; });
    r.per_query[qid] = hit ? 1.0 : 0.0;
  }
  finish(r);
  return r;
}

EvalReport recall_at_k(const RankingRun& run, const Qrels& qrels, std::size_t k, int relevant_grade) {
  if (k == 0) throw InputError("recall cutoff k must be at least 1");
  EvalReport r;
  r.metric = with_k("recall", k);
  for (const auto& [qid, docs] : run.queries) {
    const auto* judged = judgments(qrels, qid);
    std::size_t total = 0;
    if (judged) {
      for (const auto& [doc, g] : *judged) total += g >= relevant_grade ? 1 : 0;
    }
    std::size_t found = 0;
    for (std::size_t i = 0; i < std::min(k, docs.size()); ++i) {
      found += grade_of(judged, docs[i].doc_id) >= relevant_grade ? 1 : 0;
    }
    r.per_query[qid] = total == 0 ? 0.0 : static_cast<double>(found) / static_cast<double>(total);
  }
  finish(r);
  return r;
}

// ------------------------------------------------------------------- t-test

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw InputError("incomplete beta needs positive shape parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // The continued fraction converges fast for x < (a + 1) / (a + b + 2);
  // otherwise use the symmetry I_x(a, b) = 1 - I_{1-x}(b, a).
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);

  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  // Modified Lentz evaluation of the continued fraction.
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-16;
  double f = 1.0;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  f = d;
  for (int m = 1; m <= 10000; ++m) {
    const double md = m;
    double num = md * (b - md) * x / ((a + 2.0 * md - 1.0) * (a + 2.0 * md));
    d = 1.0 + num * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(a + md) * (a + b + md) * x / ((a + 2.0 * md) * (a + 2.0 * md + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return std::exp(log_front) * f / a;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw InputError("t distribution needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("paired t-test needs equal-length samples");
  const std::size_t n = a.size();
  if (n < 2) throw InputError("paired t-test needs at least two pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = (a[i] - b[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult r;
  r.df = n - 1;
  if (sd == 0.0) {
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double df = static_cast<double>(r.df);
  // Two-tailed p = I_{df/(df+t^2)}(df/2, 1/2).
  r.p = std::clamp(regularized_incomplete_beta(df / 2.0, 0.5, df / (df + r.t * r.t)), 0.0, 1.0);
  return r;
}

TTestResult paired_ttest(const EvalReport& a, const EvalReport& b) {
  std::vector<double> va;
  std::vector<double> vb;
  for (const auto& [qid, v] : a.per_query) {
    const auto it = b.per_query.find(qid);
    if (it == b.per_query.end()) continue;
    va.push_back(v);
    vb.push_back(it->second);
  }
  return paired_ttest(va, vb);
}

void write_eval_report(std::ostream& out, const EvalReport& report, bool per_query) {
  char buf[64];
  if (per_query) {
    for (const auto& [qid, v] : report.per_query) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << report.metric << '\t' << qid << '\t' << buf << '\n';
    }
  }
  std::snprintf(buf, sizeof(buf), "%.17g", report.mean);
  out << report.metric << "\tall\t" << buf << '\n';
}

void write_ttest(std::ostream& out, const TTestResult& result) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.17g\t%zu\t%.17g", result.t, result.df, result.p);
  out << buf << '\n';
}

}  // namespace ed2lm
