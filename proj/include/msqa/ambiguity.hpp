#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "msqa/corpus.hpp"
#include "msqa/question_type.hpp"
#include "msqa/text.hpp"

// Sentiment-based ambiguity handling. Candidates whose polarity conflicts
// with the reference answer (training) or with the candidate majority
// (evaluation) are dropped; the rule applies to dichotomous questions only.

namespace msqa {

enum class Polarity { Positive, Negative, Neutral };

inline const char* to_string(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "positive";
    case Polarity::Negative: return "negative";
    case Polarity::Neutral: return "neutral";
  }
  return "?";
}

// Lexicon-plus-negation polarity classifier. Score = sum of signed lexicon
// hits; a hit's sign flips when a negation word occurs among the
// `negation_window` tokens immediately before it (punctuation tokens count as
// window positions). Positive if score > 0, Negative if < 0, else Neutral.
//
// Contractions: the tokenizer splits "don't" into [don, ', t]; the classifier
// re-joins that shape into "don't" before matching, so negation entries can be
// written in their natural spelling.
class SentimentClassifier {
 public:
  SentimentClassifier() = default;
  SentimentClassifier(std::unordered_map<std::string, int> lexicon,
                      std::unordered_set<std::string> negations,
                      std::size_t negation_window = 3)
      : lexicon_(std::move(lexicon)),
        negations_(std::move(negations)),
        window_(negation_window) {}

  // Lexicon file: one "term<TAB>+1|-1" per line; negation file: one term per
  // line. '#' starts a comment in both.
  static SentimentClassifier from_files(const std::string& lexicon_path,
                                        const std::string& negation_path,
                                        std::size_t negation_window = 3) {
    std::unordered_map<std::string, int> lexicon;
    std::unordered_set<std::string> negations;
    std::ifstream lex(lexicon_path);
    if (!lex)
      throw std::runtime_error("cannot open lexicon file: " + lexicon_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lex, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw std::runtime_error(lexicon_path + ":" + std::to_string(lineno) +
                                 ": expected 'term<TAB>+1|-1'");
      std::string term = line.substr(0, tab);
      std::string sign = line.substr(tab + 1);
      if (!sign.empty() && sign.back() == '\r') sign.pop_back();
      if (sign == "+1")
        lexicon[to_lower(term)] = 1;
      else if (sign == "-1")
        lexicon[to_lower(term)] = -1;
      else
        throw std::runtime_error(lexicon_path + ":" + std::to_string(lineno) +
                                 ": sign must be +1 or -1, got '" + sign + "'");
    }
    std::ifstream neg(negation_path);
    if (!neg)
      throw std::runtime_error("cannot open negation file: " + negation_path);
    while (std::getline(neg, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      negations.insert(to_lower(line));
    }
    return SentimentClassifier(std::move(lexicon), std::move(negations),
                               negation_window);
  }

  Polarity polarity(std::string_view text) const {
    int score = 0;
    auto tokens = merge_contractions(tokenize_words(text));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      auto it = lexicon_.find(tokens[i]);
      if (it == lexicon_.end()) continue;
      int sign = it->second;
      for (std::size_t back = 1; back <= window_ && back <= i; ++back) {
        if (negations_.contains(tokens[i - back])) {
          sign = -sign;
          break;
        }
      }
      score += sign;
    }
    if (score > 0) return Polarity::Positive;
    if (score < 0) return Polarity::Negative;
    return Polarity::Neutral;
  }

  bool loaded() const { return !lexicon_.empty(); }

 private:
  static std::vector<std::string> merge_contractions(
      std::vector<std::string> tokens) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i + 2 < tokens.size() && tokens[i + 1] == "'" &&
          tokens[i + 2] == "t" && !is_punct_token(tokens[i])) {
        out.push_back(tokens[i] + "'t");
        i += 2;
      } else {
        out.push_back(std::move(tokens[i]));
      }
    }
    return out;
  }

  std::unordered_map<std::string, int> lexicon_;
  std::unordered_set<std::string> negations_;
  std::size_t window_ = 3;
};

inline Polarity candidate_polarity(const SentimentClassifier& classifier,
                                   const Candidate& c) {
  return classifier.polarity(c.rendering());
}

inline Polarity opposite(Polarity p) {
  if (p == Polarity::Positive) return Polarity::Negative;
  if (p == Polarity::Negative) return Polarity::Positive;
  return Polarity::Neutral;
}

// Train-time rule: candidates whose polarity is the strict opposite of the
// reference answer's polarity are removed. Neutral candidates always survive;
// a Neutral label disables filtering entirely. Callers apply this to
// dichotomous questions only.
inline std::vector<Candidate> filter_for_training(
    const std::vector<Candidate>& candidates, const std::string& label_answer,
    const SentimentClassifier& classifier) {
  Polarity label = classifier.polarity(label_answer);
  if (label == Polarity::Neutral) return candidates;
  Polarity reject = opposite(label);
  std::vector<Candidate> out;
  for (const auto& c : candidates)
    if (candidate_polarity(classifier, c) != reject) out.push_back(c);
  return out;
}

// Vote outcome over a list of polarities. Neutral entries are excluded from
// the vote but always kept. A tied nonzero vote keeps everything and marks
// the set ambiguous; otherwise the minority polarity is marked for removal.
struct MajorityVote {
  std::vector<bool> keep;
  std::size_t positive_votes = 0;
  std::size_t negative_votes = 0;
  bool ambiguous = false;
};

inline MajorityVote majority_vote(const std::vector<Polarity>& polarities) {
  MajorityVote vote;
  for (Polarity p : polarities) {
    if (p == Polarity::Positive) ++vote.positive_votes;
    if (p == Polarity::Negative) ++vote.negative_votes;
  }
  if (vote.positive_votes == vote.negative_votes) {
    vote.keep.assign(polarities.size(), true);
    vote.ambiguous = vote.positive_votes > 0;
    return vote;
  }
  const Polarity reject = vote.positive_votes > vote.negative_votes
                              ? Polarity::Negative
                              : Polarity::Positive;
  vote.keep.reserve(polarities.size());
  for (Polarity p : polarities) vote.keep.push_back(p != reject);
  return vote;
}

struct MajorityFilterResult {
  std::vector<Candidate> candidates;
  bool ambiguous = false;  // positive/negative vote tied; nothing removed
  std::size_t positive_votes = 0;
  std::size_t negative_votes = 0;
};

// Evaluation-time rule: the minority polarity among candidates is eliminated.
// Neutral candidates are excluded from the vote but always retained. A tied
// vote removes nothing and marks the result ambiguous.
inline MajorityFilterResult filter_by_majority(
    const std::vector<Candidate>& candidates,
    const SentimentClassifier& classifier) {
  std::vector<Polarity> polarities;
  polarities.reserve(candidates.size());
  for (const auto& c : candidates)
    polarities.push_back(candidate_polarity(classifier, c));
  const MajorityVote vote = majority_vote(polarities);

  MajorityFilterResult result;
  result.ambiguous = vote.ambiguous;
  result.positive_votes = vote.positive_votes;
  result.negative_votes = vote.negative_votes;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (vote.keep[i]) result.candidates.push_back(candidates[i]);
  return result;
}

}  // namespace msqa
