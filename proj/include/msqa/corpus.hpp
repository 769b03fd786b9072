#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "msqa/question_type.hpp"
#include "msqa/text.hpp"

// Data model and JSONL ingestion for the two corpora: the labeled relevancy
// corpus (one relevance flag per candidate) and the generation corpus (a
// reference answer per question, no flags). One record per line, UTF-8.

namespace msqa {

enum class Source { Review, DuplicateQa, Spec };

inline const char* to_string(Source s) {
  switch (s) {
    case Source::Review: return "review";
    case Source::DuplicateQa: return "dup_qa";
    case Source::Spec: return "spec";
  }
  return "?";
}

inline std::optional<Source> source_from_string(std::string_view s) {
  if (s == "review") return Source::Review;
  if (s == "dup_qa") return Source::DuplicateQa;
  if (s == "spec") return Source::Spec;
  return std::nullopt;
}

// One unit of product knowledge. For DuplicateQa, aux_text is the duplicate
// question and text its answer; for Spec, aux_text is the key and text the
// value; for Review, text is a single sentence and aux_text stays empty.
struct Candidate {
  std::string id;
  Source source = Source::Review;
  std::string text;
  std::optional<std::string> aux_text;
  std::optional<bool> relevance_label;

  // Full surface form, used for overlap scoring and sentiment.
  std::string rendering() const {
    return aux_text ? *aux_text + " " + text : text;
  }
};

struct QuestionRecord {
  std::string id;
  std::string question;
  std::vector<Candidate> candidates;
  std::optional<std::string> reference_answer;
  QuestionType qtype = QuestionType::Dichotomous;
};

// ---------------------------------------------------------------------------
// Vocabulary

// Word-level vocabulary. The six reserved tokens occupy ids 0..5 in the order
// pad, unk, bos, eos, sep, cls; corpus tokens follow, ranked by descending
// frequency then lexicographically.
class Vocabulary {
 public:
  static constexpr int kPadId = msqa::kPadId;
  static constexpr int kUnkId = msqa::kUnkId;
  static constexpr int kBosId = msqa::kBosId;
  static constexpr int kEosId = msqa::kEosId;
  static constexpr int kSepId = msqa::kSepId;
  static constexpr int kClsId = msqa::kClsId;
  static constexpr int kNumSpecials = 6;

  Vocabulary() {
    for (auto s : kSpecialTokens) add(std::string(s));
  }

  int add(const std::string& token) {
    auto [it, inserted] =
        token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
    if (inserted) id_to_token_.push_back(token);
    return it->second;
  }

  std::optional<int> find(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    if (it == token_to_id_.end()) return std::nullopt;
    return it->second;
  }

  int id_or_unk(std::string_view token) const {
    auto id = find(token);
    return id ? *id : kUnkId;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= static_cast<int>(id_to_token_.size()))
      throw std::out_of_range("Vocabulary::token: id " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

  // FNV-1a over the token list in id order; artifacts refuse to combine when
  // hashes disagree.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](unsigned char c) {
      h ^= c;
      h *= 1099511628211ull;
    };
    for (const auto& t : id_to_token_) {
      for (unsigned char c : t) mix(c);
      mix('\n');
    }
    return h;
  }

 private:
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

inline std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (auto& t : tokenize_words(text)) ids.push_back(vocab.id_or_unk(t));
  return ids;
}

inline std::string detokenize(const std::vector<int>& ids,
                              const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus statistics

struct CorpusStats {
  std::size_t question_count = 0;
  std::size_t candidate_count = 0;
  std::size_t unanswerable_count = 0;  // records with an empty candidate pool
  double wh_fraction = 0.0;
  std::map<Source, std::size_t> per_source_count;
  std::map<Source, double> per_source_avg_per_question;
  // Label stats, populated only when candidates carry relevance labels.
  std::size_t labeled_count = 0;
  std::size_t relevant_count = 0;
  std::map<Source, double> per_source_relevant_fraction;
};

inline CorpusStats compute_stats(const std::vector<QuestionRecord>& records) {
  CorpusStats st;
  st.question_count = records.size();
  std::size_t wh = 0;
  std::map<Source, std::size_t> relevant_by_source;
  for (const auto& r : records) {
    if (r.qtype == QuestionType::WH) ++wh;
    if (r.candidates.empty()) ++st.unanswerable_count;
    for (const auto& c : r.candidates) {
      ++st.candidate_count;
      ++st.per_source_count[c.source];
      if (c.relevance_label) {
        ++st.labeled_count;
        if (*c.relevance_label) {
          ++st.relevant_count;
          ++relevant_by_source[c.source];
        }
      }
    }
  }
  if (!records.empty()) {
    st.wh_fraction = static_cast<double>(wh) / records.size();
    for (auto& [src, n] : st.per_source_count)
      st.per_source_avg_per_question[src] =
          static_cast<double>(n) / records.size();
  }
  for (auto& [src, n] : st.per_source_count)
    if (n > 0)
      st.per_source_relevant_fraction[src] =
          static_cast<double>(relevant_by_source[src]) / n;
  return st;
}

// ---------------------------------------------------------------------------
// JSONL parsing

// Relevancy corpora carry per-candidate labels, generation corpora carry
// reference answers, requests carry neither.
enum class CorpusTask { Relevancy, Generation, Request };

namespace detail {

[[noreturn]] inline void schema_error(const std::string& path, std::size_t line,
                                      const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

inline Candidate parse_candidate(const nlohmann::json& j, CorpusTask task,
                                 const std::string& path, std::size_t line,
                                 std::size_t index) {
  auto fail = [&](const std::string& what) {
    schema_error(path, line,
                 "candidate " + std::to_string(index) + ": " + what);
  };
  if (!j.is_object()) fail("expected an object");
  Candidate c;
  if (!j.contains("id") || !j["id"].is_string()) fail("missing field 'id'");
  c.id = j["id"].get<std::string>();
  if (!j.contains("source") || !j["source"].is_string())
    fail("missing field 'source'");
  auto src = source_from_string(j["source"].get<std::string>());
  if (!src)
    fail("unknown source tag '" + j["source"].get<std::string>() + "'");
  c.source = *src;
  if (!j.contains("text") || !j["text"].is_string())
    fail("missing field 'text'");
  c.text = j["text"].get<std::string>();
  if (j.contains("aux_text")) {
    if (!j["aux_text"].is_string()) fail("field 'aux_text' must be a string");
    c.aux_text = j["aux_text"].get<std::string>();
  }
  if (c.source == Source::DuplicateQa && !c.aux_text)
    fail("missing field 'aux_text' (duplicate question) for source 'dup_qa'");
  if (c.source == Source::Spec && !c.aux_text)
    fail("missing field 'aux_text' (key) for source 'spec'");
  if (c.source == Source::Review && c.aux_text)
    fail("field 'aux_text' not allowed for source 'review'");
  if (task == CorpusTask::Relevancy) {
    if (!j.contains("relevant") || !j["relevant"].is_boolean())
      fail("missing field 'relevant'");
    c.relevance_label = j["relevant"].get<bool>();
  } else if (j.contains("relevant")) {
    fail("field 'relevant' is only allowed in a relevancy corpus");
  }
  return c;
}

}  // namespace detail

inline QuestionRecord parse_record(const nlohmann::json& j, CorpusTask task,
                                   const std::string& path, std::size_t line) {
  if (!j.is_object()) detail::schema_error(path, line, "expected an object");
  QuestionRecord r;
  if (!j.contains("id") || !j["id"].is_string())
    detail::schema_error(path, line, "missing field 'id'");
  r.id = j["id"].get<std::string>();
  if (!j.contains("question") || !j["question"].is_string() ||
      j["question"].get<std::string>().empty())
    detail::schema_error(path, line, "missing or empty field 'question'");
  r.question = j["question"].get<std::string>();
  r.qtype = classify_question(r.question);
  if (j.contains("candidates")) {
    if (!j["candidates"].is_array())
      detail::schema_error(path, line, "field 'candidates' must be an array");
    std::size_t index = 0;
    for (const auto& cj : j["candidates"])
      r.candidates.push_back(
          detail::parse_candidate(cj, task, path, line, index++));
  }
  if (task == CorpusTask::Generation) {
    if (!j.contains("answer") || !j["answer"].is_string() ||
        j["answer"].get<std::string>().empty())
      detail::schema_error(path, line, "missing or empty field 'answer'");
    r.reference_answer = j["answer"].get<std::string>();
  } else if (j.contains("answer") && j["answer"].is_string()) {
    r.reference_answer = j["answer"].get<std::string>();
  }
  return r;
}

inline std::vector<QuestionRecord> parse_corpus(const std::string& path,
                                                CorpusTask task) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::vector<QuestionRecord> records;
  std::string linebuf;
  std::size_t line = 0;
  while (std::getline(in, linebuf)) {
    ++line;
    if (linebuf.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j = nlohmann::json::parse(linebuf, nullptr, false);
    if (j.is_discarded())
      detail::schema_error(path, line, "invalid JSON");
    records.push_back(parse_record(j, task, path, line));
  }
  return records;
}

inline std::vector<QuestionRecord> parse_relevancy_corpus(
    const std::string& path) {
  return parse_corpus(path, CorpusTask::Relevancy);
}

inline std::vector<QuestionRecord> parse_generation_corpus(
    const std::string& path) {
  return parse_corpus(path, CorpusTask::Generation);
}

inline std::vector<QuestionRecord> parse_request_corpus(const std::string& path) {
  return parse_corpus(path, CorpusTask::Request);
}

inline nlohmann::json candidate_to_json(const Candidate& c, CorpusTask task) {
  nlohmann::json j;
  j["id"] = c.id;
  j["source"] = to_string(c.source);
  j["text"] = c.text;
  if (c.aux_text) j["aux_text"] = *c.aux_text;
  if (task == CorpusTask::Relevancy)
    j["relevant"] = c.relevance_label.value_or(false);
  return j;
}

inline nlohmann::json record_to_json(const QuestionRecord& r, CorpusTask task) {
  nlohmann::json j;
  j["id"] = r.id;
  j["question"] = r.question;
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : r.candidates)
    j["candidates"].push_back(candidate_to_json(c, task));
  if (task == CorpusTask::Generation)
    j["answer"] = r.reference_answer.value_or("");
  else if (r.reference_answer)
    j["answer"] = *r.reference_answer;
  return j;
}

inline void write_corpus(const std::vector<QuestionRecord>& records,
                         const std::string& path, CorpusTask task) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& r : records) out << record_to_json(r, task).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Candidate construction helpers

// One Review candidate per sentence of a raw review. Whitespace-only input
// yields an empty list.
inline std::vector<Candidate> split_review(std::string_view review) {
  std::vector<Candidate> out;
  std::size_t k = 0;
  for (auto& s : split_sentences(review)) {
    Candidate c;
    c.id = "s" + std::to_string(++k);
    c.source = Source::Review;
    c.text = std::move(s);
    out.push_back(std::move(c));
  }
  return out;
}

// Specification key-value pairs are used directly, never templated into a
// sentence.
inline Candidate spec_candidate(const std::string& key,
                                const std::string& value) {
  if (key.empty())
    throw std::invalid_argument("spec_candidate: empty key");
  Candidate c;
  c.source = Source::Spec;
  c.aux_text = key;
  c.text = value;
  return c;
}

// ---------------------------------------------------------------------------
// Lexical overlap and the weak pre-retrieval filter

// Jaccard overlap of content-token sets between the question and the
// candidate's full rendering; 0 when either set is empty. This is the
// deterministic baseline scorer; the pre-retrieval filter reuses it so there
// is a single lexical notion in the pipeline.
inline double lexical_score(std::string_view question, const Candidate& c) {
  auto q = content_token_set(question);
  auto k = content_token_set(c.rendering());
  if (q.empty() || k.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : q)
    if (k.contains(t)) ++inter;
  std::size_t uni = q.size() + k.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Keeps at most `cap` candidates per source, the best-overlapping ones, and
// returns them ordered by descending score (ties keep input order).
inline std::vector<Candidate> prefilter(std::string_view question,
                                        const std::vector<Candidate>& candidates,
                                        std::size_t cap) {
  if (cap < 1) throw std::invalid_argument("prefilter: cap must be >= 1");
  struct Scored {
    std::size_t input_index;
    double score;
  };
  std::map<Source, std::vector<Scored>> by_source;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    by_source[candidates[i].source].push_back(
        {i, lexical_score(question, candidates[i])});

  std::vector<Scored> kept;
  for (auto& [src, group] : by_source) {
    std::stable_sort(group.begin(), group.end(),
                     [](const Scored& a, const Scored& b) {
                       return a.score > b.score;
                     });
    for (std::size_t i = 0; i < group.size() && i < cap; ++i)
      kept.push_back(group[i]);
  }
  std::sort(kept.begin(), kept.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.input_index < b.input_index;
  });
  std::vector<Candidate> out;
  out.reserve(kept.size());
  for (const auto& s : kept) out.push_back(candidates[s.input_index]);
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary construction

// Tokens ranked by frequency, then lexicographically, truncated to max_size
// entries including the reserved ids.
inline Vocabulary build_vocabulary(const std::vector<QuestionRecord>& records,
                                   std::size_t max_size) {
  if (max_size <= Vocabulary::kNumSpecials)
    throw std::invalid_argument(
        "build_vocabulary: max_size must exceed the reserved token count");
  if (records.empty())
    throw std::invalid_argument("build_vocabulary: empty corpus");

  std::unordered_map<std::string, std::size_t> freq;
  auto count = [&freq](std::string_view text) {
    for (auto& t : tokenize_words(text))
      if (!is_special_token(t)) ++freq[t];
  };
  for (const auto& r : records) {
    count(r.question);
    if (r.reference_answer) count(*r.reference_answer);
    for (const auto& c : r.candidates) {
      count(c.text);
      if (c.aux_text) count(*c.aux_text);
    }
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(),
                                                          freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  for (const auto& [tok, n] : ranked) {
    if (static_cast<std::size_t>(vocab.size()) >= max_size) break;
    vocab.add(tok);
  }
  return vocab;
}

}  // namespace msqa
