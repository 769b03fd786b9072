#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "msqa/question_type.hpp"

// Text-generation and classification measures: ROUGE-1/2/L, corpus-level
// BLEU-1 with brevity penalty, and accuracy/precision/recall/F1.

namespace msqa {

using TokenList = std::vector<std::string>;

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double harmonic_f1(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(
    const TokenList& tokens, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i,
                                      tokens.begin() + i + n)];
  return counts;
}

// Clipped multiset intersection size between candidate and reference n-grams.
inline std::size_t clipped_overlap(const TokenList& candidate,
                                   const TokenList& reference, std::size_t n) {
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  std::size_t overlap = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

inline std::size_t lcs_length(const TokenList& a, const TokenList& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace detail

// N-gram overlap counted with multiplicity. Empty n-gram sets on either side
// give an all-zero score.
inline RougeScore rouge_n(const TokenList& candidate, const TokenList& reference,
                          std::size_t n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  RougeScore s;
  const std::size_t cand_total =
      candidate.size() >= n ? candidate.size() - n + 1 : 0;
  const std::size_t ref_total =
      reference.size() >= n ? reference.size() - n + 1 : 0;
  if (cand_total == 0 || ref_total == 0) return s;
  const std::size_t overlap = detail::clipped_overlap(candidate, reference, n);
  s.precision = static_cast<double>(overlap) / cand_total;
  s.recall = static_cast<double>(overlap) / ref_total;
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

inline RougeScore rouge_l(const TokenList& candidate,
                          const TokenList& reference) {
  RougeScore s;
  if (candidate.empty() || reference.empty()) return s;
  const std::size_t lcs = detail::lcs_length(candidate, reference);
  s.precision = static_cast<double>(lcs) / candidate.size();
  s.recall = static_cast<double>(lcs) / reference.size();
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

// Corpus-level clipped unigram precision times the brevity penalty
// BP = min(1, exp(1 - |ref| / |cand|)) over corpus-summed lengths. No
// smoothing. All-empty candidates score 0.
inline double bleu1(const std::vector<TokenList>& candidates,
                    const std::vector<TokenList>& references) {
  if (candidates.size() != references.size() || candidates.empty())
    throw std::invalid_argument("bleu1: lists must have equal nonzero length");
  std::size_t matched = 0, cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    matched += detail::clipped_overlap(candidates[i], references[i], 1);
    cand_len += candidates[i].size();
    ref_len += references[i].size();
  }
  if (cand_len == 0) return 0.0;
  const double precision = static_cast<double>(matched) / cand_len;
  const double bp = std::min(
      1.0, std::exp(1.0 - static_cast<double>(ref_len) / cand_len));
  return precision * bp;
}

// ---------------------------------------------------------------------------
// Classification metrics

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::size_t total() const { return tp + fp + fn + tn; }
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  ConfusionCounts counts;
  bool degenerate = false;  // a zero denominator was replaced by 0
};

inline ClassificationMetrics classification_metrics(
    const std::vector<bool>& predictions, const std::vector<bool>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw std::invalid_argument(
        "classification_metrics: predictions and labels must have equal "
        "nonzero length");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] && labels[i]) ++m.counts.tp;
    else if (predictions[i] && !labels[i]) ++m.counts.fp;
    else if (!predictions[i] && labels[i]) ++m.counts.fn;
    else ++m.counts.tn;
  }
  m.accuracy = static_cast<double>(m.counts.tp + m.counts.tn) /
               static_cast<double>(m.counts.total());
  if (m.counts.tp + m.counts.fp > 0)
    m.precision = static_cast<double>(m.counts.tp) /
                  static_cast<double>(m.counts.tp + m.counts.fp);
  else
    m.degenerate = true;
  if (m.counts.tp + m.counts.fn > 0)
    m.recall = static_cast<double>(m.counts.tp) /
               static_cast<double>(m.counts.tp + m.counts.fn);
  else
    m.degenerate = true;
  m.f1 = harmonic_f1(m.precision, m.recall);
  return m;
}

// ---------------------------------------------------------------------------
// Aggregate generation report

// Per-question generation scores, bucketed by question type.
struct QuestionEval {
  std::string id;
  QuestionType qtype = QuestionType::Dichotomous;
  RougeScore r1, r2, rl;
  TokenList candidate_tokens;  // generated answer
  TokenList reference_tokens;
};

struct BucketReport {
  std::size_t count = 0;
  // Display convention: scores scaled x100. ROUGE values are macro-averaged
  // F-measures; B1 is corpus-level within the bucket.
  double r1 = 0.0, r2 = 0.0, rl = 0.0, b1 = 0.0;
};

struct EvalReport {
  std::string label;  // pipeline variant or run name
  std::map<std::string, BucketReport> buckets;  // "dichotomous" / "wh"
  std::vector<QuestionEval> per_question;
};

inline EvalReport aggregate_report(std::vector<QuestionEval> per_question,
                                   const std::string& label = {}) {
  EvalReport report;
  report.label = label;
  std::map<std::string, std::vector<const QuestionEval*>> grouped;
  for (const auto& q : per_question) grouped[to_string(q.qtype)].push_back(&q);
  for (auto& [bucket, items] : grouped) {
    BucketReport b;
    b.count = items.size();
    std::vector<TokenList> cands, refs;
    for (const auto* q : items) {
      b.r1 += q->r1.f1;
      b.r2 += q->r2.f1;
      b.rl += q->rl.f1;
      cands.push_back(q->candidate_tokens);
      refs.push_back(q->reference_tokens);
    }
    b.r1 = b.r1 / items.size() * 100.0;
    b.r2 = b.r2 / items.size() * 100.0;
    b.rl = b.rl / items.size() * 100.0;
    b.b1 = bleu1(cands, refs) * 100.0;
    report.buckets[bucket] = b;
  }
  report.per_question = std::move(per_question);
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["label"] = report.label;
  j["buckets"] = nlohmann::json::object();
  for (const auto& [name, b] : report.buckets) {
    j["buckets"][name] = {{"count", b.count}, {"r1", b.r1},
                          {"r2", b.r2},       {"rl", b.rl},
                          {"b1", b.b1}};
  }
  j["per_question"] = nlohmann::json::array();
  for (const auto& q : report.per_question) {
    j["per_question"].push_back({{"id", q.id},
                                 {"qtype", to_string(q.qtype)},
                                 {"r1", q.r1.f1},
                                 {"r2", q.r2.f1},
                                 {"rl", q.rl.f1}});
  }
  return j;
}

// Aligned-column table, one row per bucket.
inline std::string report_to_table(const EvalReport& report) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-18s %8s %8s %8s %8s %8s\n",
                ("[" + report.label + "]").c_str(), "count", "R1", "R2", "RL",
                "B1");
  out += buf;
  for (const auto& [name, b] : report.buckets) {
    std::snprintf(buf, sizeof(buf), "%-18s %8zu %8.2f %8.2f %8.2f %8.2f\n",
                  name.c_str(), b.count, b.r1, b.r2, b.rl, b.b1);
    out += buf;
  }
  return out;
}

}  // namespace msqa
