#pragma once

// End-to-end answering pipeline: score and rank candidates, keep the top k,
// drop sentiment outliers (dichotomous questions only), render the survivors
// into a generation context, decode an answer, and report every intermediate
// decision in a trace.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msqa/ambiguity.hpp"
#include "msqa/corpus.hpp"
#include "msqa/metrics.hpp"
#include "msqa/minigen.hpp"
#include "msqa/question_type.hpp"
#include "msqa/relevancy.hpp"

namespace msqa {

// Rank tie-break order between sources; mirrors their observed relevance
// rates (duplicate questions > reviews > specifications).
inline int source_priority(Source s) {
  switch (s) {
    case Source::DuplicateQa: return 0;
    case Source::Review: return 1;
    case Source::Spec: return 2;
  }
  return 3;
}

struct ScoredCandidate {
  std::size_t index = 0;  // position in the record's candidate list
  double score = 0.0;
};

// Descending score; ties prefer the historically stronger source, then the
// earlier candidate, so rankings are deterministic.
inline std::vector<ScoredCandidate> rank_candidates(
    const QuestionRecord& record, const std::vector<double>& scores) {
  if (scores.size() != record.candidates.size())
    throw std::invalid_argument("rank_candidates: one score per candidate");
  std::vector<ScoredCandidate> ranked;
  ranked.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) ranked.push_back({i, scores[i]});
  std::sort(ranked.begin(), ranked.end(),
            [&record](const ScoredCandidate& a, const ScoredCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              const int pa = source_priority(record.candidates[a.index].source);
              const int pb = source_priority(record.candidates[b.index].source);
              if (pa != pb) return pa < pb;
              return a.index < b.index;
            });
  return ranked;
}

// ---------------------------------------------------------------------------
// Scorers

using ScoreFn = std::function<std::vector<double>(const QuestionRecord&)>;

inline ScoreFn make_lexical_scorer() {
  return [](const QuestionRecord& record) {
    std::vector<double> scores;
    scores.reserve(record.candidates.size());
    for (const Candidate& c : record.candidates)
      scores.push_back(lexical_score(record.question, c));
    return scores;
  };
}

// The model must outlive the returned function.
template <typename S>
ScoreFn make_trained_scorer(const RelevancyModel<S>& model) {
  return [&model](const QuestionRecord& record) {
    return score_candidates(model, record);
  };
}

// Uniform scores seeded from (seed, question id): deterministic per question
// and independent of candidate content.  Ablation baseline only.
inline ScoreFn make_random_scorer(std::uint64_t seed) {
  return [seed](const QuestionRecord& record) {
    std::uint64_t h = 1469598103934665603ull ^ seed;
    for (unsigned char c : record.id) {
      h ^= c;
      h *= 1099511628211ull;
    }
    auto rng = minigen::make_rng(h);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> scores(record.candidates.size());
    for (double& s : scores) s = uniform(rng);
    return scores;
  };
}

// ---------------------------------------------------------------------------
// Variants and options

// GenerationOnly feeds every candidate to the generator in input order;
// RelevancyGeneration adds ranking and top-k selection; Full adds the
// majority sentiment filter for dichotomous questions.
enum class PipelineVariant { GenerationOnly, RelevancyGeneration, Full };

inline std::string to_string(PipelineVariant v) {
  switch (v) {
    case PipelineVariant::GenerationOnly: return "gen";
    case PipelineVariant::RelevancyGeneration: return "rel";
    case PipelineVariant::Full: return "full";
  }
  return "?";
}

inline PipelineVariant pipeline_variant_from_string(std::string_view s) {
  if (s == "gen") return PipelineVariant::GenerationOnly;
  if (s == "rel") return PipelineVariant::RelevancyGeneration;
  if (s == "full") return PipelineVariant::Full;
  throw std::invalid_argument("unknown pipeline variant: " + std::string(s) +
                              " (expected gen, rel or full)");
}

struct PipelineOptions {
  PipelineVariant variant = PipelineVariant::Full;
  int top_k = 7;
  minigen::DecodeConfig decode;

  void validate() const {
    if (top_k < 1)
      throw std::invalid_argument("PipelineOptions: top_k must be >= 1");
    decode.validate();
  }
};

// ---------------------------------------------------------------------------
// Trace

struct TraceCandidate {
  std::size_t index = 0;
  std::string id;
  Source source = Source::Review;
  double score = 0.0;
  bool selected = false;          // survived top-k
  bool removed_by_filter = false; // selected but dropped by sentiment vote
  std::string polarity;           // set when the filter ran
};

struct AnswerTrace {
  std::string question_id;
  QuestionType qtype = QuestionType::Dichotomous;
  PipelineVariant variant = PipelineVariant::Full;
  std::vector<TraceCandidate> ranked;  // rank order (input order for gen-only)
  bool filter_applied = false;
  std::size_t positive_votes = 0;
  std::size_t negative_votes = 0;
  bool ambiguous = false;
  std::string context;
  std::size_t context_tokens = 0;
  bool context_truncated = false;
  bool low_confidence = false;  // no candidates were available
  std::string strategy;
  double log_prob = 0.0;
  bool reached_eos = false;
  std::string answer;
};

inline nlohmann::json trace_to_json(const AnswerTrace& t) {
  nlohmann::json ranked = nlohmann::json::array();
  for (const TraceCandidate& c : t.ranked) {
    nlohmann::json j{{"index", c.index},
                     {"id", c.id},
                     {"source", to_string(c.source)},
                     {"score", c.score},
                     {"selected", c.selected},
                     {"removed_by_filter", c.removed_by_filter}};
    if (!c.polarity.empty()) j["polarity"] = c.polarity;
    ranked.push_back(std::move(j));
  }
  nlohmann::json j{{"question_id", t.question_id},
                   {"question_type", to_string(t.qtype)},
                   {"variant", to_string(t.variant)},
                   {"candidates", std::move(ranked)},
                   {"context", t.context},
                   {"context_tokens", t.context_tokens},
                   {"context_truncated", t.context_truncated},
                   {"low_confidence", t.low_confidence},
                   {"decode",
                    {{"strategy", t.strategy},
                     {"log_prob", t.log_prob},
                     {"reached_eos", t.reached_eos}}},
                   {"answer", t.answer}};
  if (t.filter_applied) {
    j["filter"] = {{"positive_votes", t.positive_votes},
                   {"negative_votes", t.negative_votes},
                   {"ambiguous", t.ambiguous}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Context rendering

// One context string: "question <sep> part part ...".  Duplicate-QA parts are
// "question answer"; spec parts are "key value" with the value stripped of
// punctuation (decimal numbers survive).  The result is lowercased so it
// round-trips the tokenizer unchanged.
inline std::string render_context(
    const std::string& question,
    const std::vector<const Candidate*>& candidates) {
  std::string out = question;
  if (!candidates.empty()) {
    out += " ";
    out += kSepToken;
    for (const Candidate* c : candidates) {
      std::string part;
      switch (c->source) {
        case Source::Review:
          part = c->text;
          break;
        case Source::DuplicateQa:
          part = c->aux_text.value() + " " + c->text;
          break;
        case Source::Spec:
          part = c->aux_text.value() + " " + strip_punctuation(c->text);
          break;
      }
      out += " " + part;
    }
  }
  return to_lower(out);
}

// ---------------------------------------------------------------------------
// Answering

struct AnswerResult {
  std::string answer;
  AnswerTrace trace;
};

// The sentiment classifier may be null unless the variant is Full.
template <typename S>
AnswerResult answer_question(const QuestionRecord& record,
                             const minigen::GeneratorParams<S>& generator,
                             const PipelineOptions& options,
                             const ScoreFn& scorer,
                             const SentimentClassifier* sentiment) {
  options.validate();
  if (options.variant == PipelineVariant::Full && sentiment == nullptr)
    throw std::invalid_argument(
        "answer_question: the full variant needs a sentiment classifier");

  AnswerTrace trace;
  trace.question_id = record.id;
  trace.qtype = classify_question(record.question);
  trace.variant = options.variant;

  // Rank (or keep input order for the generation-only variant).
  std::vector<ScoredCandidate> ranked;
  if (options.variant == PipelineVariant::GenerationOnly) {
    for (std::size_t i = 0; i < record.candidates.size(); ++i)
      ranked.push_back({i, 0.0});
  } else {
    if (!scorer)
      throw std::invalid_argument("answer_question: scorer is required");
    ranked = rank_candidates(record, scorer(record));
  }

  const std::size_t keep_n =
      options.variant == PipelineVariant::GenerationOnly
          ? ranked.size()
          : std::min(ranked.size(), static_cast<std::size_t>(options.top_k));

  for (const ScoredCandidate& sc : ranked) {
    const Candidate& c = record.candidates[sc.index];
    trace.ranked.push_back(
        {sc.index, c.id, c.source, sc.score, false, false, ""});
  }
  for (std::size_t r = 0; r < keep_n; ++r) trace.ranked[r].selected = true;

  // Majority sentiment filter on the selected candidates.
  std::vector<std::size_t> survivors;  // positions into trace.ranked
  for (std::size_t r = 0; r < keep_n; ++r) survivors.push_back(r);
  if (options.variant == PipelineVariant::Full &&
      trace.qtype == QuestionType::Dichotomous && keep_n > 0) {
    trace.filter_applied = true;
    std::vector<Polarity> polarities;
    polarities.reserve(keep_n);
    for (std::size_t r = 0; r < keep_n; ++r) {
      const Candidate& c = record.candidates[trace.ranked[r].index];
      const Polarity p = candidate_polarity(*sentiment, c);
      polarities.push_back(p);
      trace.ranked[r].polarity = to_string(p);
    }
    const MajorityVote vote = majority_vote(polarities);
    trace.positive_votes = vote.positive_votes;
    trace.negative_votes = vote.negative_votes;
    trace.ambiguous = vote.ambiguous;
    survivors.clear();
    for (std::size_t r = 0; r < keep_n; ++r) {
      if (vote.keep[r]) {
        survivors.push_back(r);
      } else {
        trace.ranked[r].removed_by_filter = true;
      }
    }
  }

  trace.low_confidence = survivors.empty();

  std::vector<const Candidate*> context_candidates;
  context_candidates.reserve(survivors.size());
  for (std::size_t r : survivors)
    context_candidates.push_back(&record.candidates[trace.ranked[r].index]);
  trace.context = render_context(record.question, context_candidates);

  std::vector<int> src = tokenize(trace.context, generator.vocab);
  trace.context_tokens = src.size();
  if (src.size() > static_cast<std::size_t>(generator.config.max_src_len)) {
    src.resize(static_cast<std::size_t>(generator.config.max_src_len));
    trace.context_truncated = true;
  }

  const minigen::DecodeResult decoded =
      minigen::generate(generator, src, options.decode);
  trace.strategy = minigen::to_string(options.decode.strategy);
  trace.log_prob = decoded.log_prob;
  trace.reached_eos = decoded.reached_eos;
  trace.answer = detokenize(decoded.ids, generator.vocab);

  return AnswerResult{trace.answer, std::move(trace)};
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentResult {
  EvalReport report;
  std::vector<AnswerTrace> traces;
};

// Answers every record that carries a reference and aggregates generation
// metrics per question-type bucket.  Records without references are skipped
// (nothing to score against).
template <typename S>
ExperimentResult run_experiment(const std::vector<QuestionRecord>& records,
                                const minigen::GeneratorParams<S>& generator,
                                const PipelineOptions& options,
                                const ScoreFn& scorer,
                                const SentimentClassifier* sentiment,
                                const std::string& label) {
  std::vector<QuestionEval> evals;
  std::vector<AnswerTrace> traces;
  for (const QuestionRecord& record : records) {
    if (!record.reference_answer.has_value()) continue;
    AnswerResult result =
        answer_question(record, generator, options, scorer, sentiment);

    QuestionEval ev;
    ev.id = record.id;
    ev.qtype = result.trace.qtype;
    ev.candidate_tokens = tokenize_words(result.answer);
    ev.reference_tokens = tokenize_words(*record.reference_answer);
    ev.r1 = rouge_n(ev.candidate_tokens, ev.reference_tokens, 1);
    ev.r2 = rouge_n(ev.candidate_tokens, ev.reference_tokens, 2);
    ev.rl = rouge_l(ev.candidate_tokens, ev.reference_tokens);
    evals.push_back(std::move(ev));
    traces.push_back(std::move(result.trace));
  }
  return ExperimentResult{aggregate_report(std::move(evals), label),
                          std::move(traces)};
}

// ---------------------------------------------------------------------------
// Generation training data

// Train-time ambiguity rule applied corpus-wide: dichotomous questions lose
// candidates whose polarity opposes the reference answer's.
inline std::vector<QuestionRecord> prepare_training_corpus(
    const std::vector<QuestionRecord>& records,
    const SentimentClassifier& sentiment) {
  std::vector<QuestionRecord> out;
  out.reserve(records.size());
  for (const QuestionRecord& record : records) {
    QuestionRecord copy = record;
    if (!record.reference_answer.has_value())
      throw std::invalid_argument(
          "prepare_training_corpus: question " + record.id +
          " has no reference answer");
    if (copy.qtype == QuestionType::Dichotomous)
      copy.candidates = filter_for_training(copy.candidates,
                                            *copy.reference_answer, sentiment);
    out.push_back(std::move(copy));
  }
  return out;
}

struct GenerationExampleStats {
  std::size_t examples = 0;
  std::size_t truncated_contexts = 0;
  std::size_t truncated_targets = 0;
};

// Token-level training pairs: context = question plus all candidates in
// input order, target = reference answer.  Overlong sides are truncated from
// the tail and counted.
inline std::vector<minigen::SequencePair> build_generation_examples(
    const std::vector<QuestionRecord>& records, const Vocabulary& vocab,
    int max_src_len, int max_tgt_len, GenerationExampleStats* stats = nullptr) {
  std::vector<minigen::SequencePair> out;
  GenerationExampleStats local;
  for (const QuestionRecord& record : records) {
    if (!record.reference_answer.has_value())
      throw std::invalid_argument("build_generation_examples: question " +
                                  record.id + " has no reference answer");
    std::vector<const Candidate*> ptrs;
    ptrs.reserve(record.candidates.size());
    for (const Candidate& c : record.candidates) ptrs.push_back(&c);

    minigen::SequencePair pair;
    pair.src = tokenize(render_context(record.question, ptrs), vocab);
    if (pair.src.size() > static_cast<std::size_t>(max_src_len)) {
      pair.src.resize(static_cast<std::size_t>(max_src_len));
      ++local.truncated_contexts;
    }
    pair.tgt = tokenize(*record.reference_answer, vocab);
    // The decoder input is BOS + target, so the target side leaves one slot.
    const std::size_t tgt_budget = static_cast<std::size_t>(max_tgt_len) - 1;
    if (pair.tgt.size() > tgt_budget) {
      pair.tgt.resize(tgt_budget);
      ++local.truncated_targets;
    }
    if (pair.src.empty() || pair.tgt.empty()) continue;
    out.push_back(std::move(pair));
    ++local.examples;
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace msqa
