#pragma once

#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

// Word-level text utilities shared by every stage of the pipeline: one
// tokenizer, one sentence splitter, one stopword list. Text is treated as
// byte-transparent UTF-8; only ASCII characters are classified, bytes >= 0x80
// always count as word characters.

namespace msqa {

// Reserved token literals. The tokenizer emits them atomically when they
// appear as a whitespace-delimited word, so rendered contexts such as
// "question <sep> candidates" survive a tokenize round trip.
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kSepToken = "<sep>";
inline constexpr std::string_view kClsToken = "<cls>";

inline constexpr std::array<std::string_view, 6> kSpecialTokens = {
    kPadToken, kUnkToken, kBosToken, kEosToken, kSepToken, kClsToken};

// Fixed ids for the reserved tokens; every vocabulary starts with these six
// in this order.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kSepId = 4;
inline constexpr int kClsId = 5;

inline bool is_special_token(std::string_view tok) {
  for (auto s : kSpecialTokens)
    if (tok == s) return true;
  return false;
}

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) != 0 || c >= 0x80;
}

inline char lower_ascii(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = lower_ascii(c);
  return out;
}

// A token is punctuation iff it starts with a non-word byte. Special tokens
// ("<sep>" etc.) start with '<' but are not punctuation.
inline bool is_punct_token(std::string_view tok) {
  if (tok.empty()) return true;
  if (is_special_token(tok)) return false;
  return !is_word_byte(static_cast<unsigned char>(tok[0]));
}

// Word-level tokenizer: lowercase ASCII, split on whitespace, split
// punctuation off as single-character tokens. Rules:
//   - a run of the same punctuation character collapses to one token
//     ("glass???" -> [glass, ?]),
//   - '.' between two digits stays inside the token ("16.7M" -> [16.7m]),
//   - reserved literals like "<sep>" pass through atomically.
inline std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view chunk = text.substr(i, j - i);
    i = j;

    if (is_special_token(chunk)) {
      tokens.emplace_back(chunk);
      continue;
    }

    std::string word;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      unsigned char c = static_cast<unsigned char>(chunk[k]);
      bool keep = is_word_byte(c);
      if (!keep && c == '.' && k > 0 && k + 1 < chunk.size() &&
          std::isdigit(static_cast<unsigned char>(chunk[k - 1])) &&
          std::isdigit(static_cast<unsigned char>(chunk[k + 1]))) {
        keep = true;  // decimal point inside a number
      }
      if (keep) {
        word.push_back(lower_ascii(chunk[k]));
      } else {
        if (!word.empty()) {
          tokens.push_back(std::move(word));
          word.clear();
        }
        std::size_t run = k;
        while (run + 1 < chunk.size() && chunk[run + 1] == chunk[k]) ++run;
        tokens.emplace_back(1, chunk[k]);
        k = run;
      }
    }
    if (!word.empty()) tokens.push_back(std::move(word));
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// First non-punctuation token, lowercased; empty when there is none.
inline std::string first_word_token(std::string_view text) {
  for (auto& t : tokenize_words(text))
    if (!is_punct_token(t)) return t;
  return {};
}

// Stopword list used by the lexical overlap scorer. Deliberately small and
// purely functional words; polarity-bearing words (no, not, yes) and WH words
// are kept out of content sets via this list where noted.
inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> kSet = {
      "a",    "an",    "the",  "is",    "are",   "was",   "were",  "be",
      "been", "being", "am",   "do",    "does",  "did",   "done",  "has",
      "have", "had",   "having", "i",   "you",   "he",    "she",   "it",
      "we",   "they",  "this", "that",  "these", "those", "of",    "in",
      "on",   "at",    "to",   "for",   "with",  "from",  "by",    "about",
      "as",   "into",  "and",  "or",    "but",   "if",    "then",  "than",
      "so",   "such",  "can",  "could", "will",  "would", "shall", "should",
      "may",  "might", "must", "my",    "your",  "our",   "his",   "her",
      "their", "me",   "him",  "us",    "them",  "its",   "what",  "how",
      "when", "where", "which", "who",  "whom",  "whose", "why"};
  return kSet;
}

// Content tokens for overlap scoring: tokenized, punctuation and stopwords
// dropped, returned as a set.
inline std::unordered_set<std::string> content_token_set(std::string_view text) {
  std::unordered_set<std::string> out;
  for (auto& t : tokenize_words(text))
    if (!is_punct_token(t) && !stopwords().contains(t)) out.insert(t);
  return out;
}

namespace detail {

// Words that end with '.' without ending a sentence. Single ASCII letters
// ("e.g." scans as "g") are treated as initials and never split.
inline const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> kSet = {
      "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st",
      "vs", "etc", "inc", "ltd", "co", "fig", "approx"};
  return kSet;
}

inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

// Letters-only word immediately before position `pos`, lowercased.
inline std::string word_before(std::string_view s, std::size_t pos) {
  std::size_t end = pos;
  std::size_t begin = end;
  while (begin > 0 &&
         std::isalpha(static_cast<unsigned char>(s[begin - 1]))) {
    --begin;
  }
  std::string w(s.substr(begin, end - begin));
  for (char& c : w) c = lower_ascii(c);
  return w;
}

inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  bool in_space = true;  // trims leading whitespace
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      in_space = false;
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace detail

// Rule-based sentence splitter. A sentence ends at a run of terminal
// punctuation (. ! ?) unless the run is a single '.' that follows a known
// abbreviation, a single letter (initials, which also covers "e.g." and
// "i.e."), or sits between two digits (decimal numbers). The terminal run
// stays attached to its sentence and whitespace is normalized, so joining the
// output reproduces every non-whitespace character of the input in order.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> sentences;
  std::size_t start = 0;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    char c = text[i];
    if (!detail::is_terminal(c)) {
      ++i;
      continue;
    }
    if (c == '.' && i > 0 && i + 1 < n &&
        std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
        std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      ++i;
      continue;
    }
    std::size_t run_end = i;
    while (run_end + 1 < n && detail::is_terminal(text[run_end + 1])) ++run_end;
    bool split = true;
    if (c == '.' && run_end == i) {
      std::string prev = detail::word_before(text, i);
      if (prev.size() == 1 || detail::abbreviations().contains(prev))
        split = false;
    }
    if (split) {
      auto sentence =
          detail::normalize_whitespace(text.substr(start, run_end + 1 - start));
      if (!sentence.empty()) sentences.push_back(std::move(sentence));
      start = run_end + 1;
    }
    i = run_end + 1;
  }
  if (start < n) {
    auto tail = detail::normalize_whitespace(text.substr(start));
    if (!tail.empty()) sentences.push_back(std::move(tail));
  }
  return sentences;
}

// Drops punctuation from a string while keeping decimal points inside
// numbers, used when rendering specification values into generation context.
inline std::string strip_punctuation(std::string_view text) {
  std::vector<std::string> kept;
  for (auto& t : tokenize_words(text))
    if (!is_punct_token(t)) kept.push_back(t);
  return join_tokens(kept);
}

}  // namespace msqa
