#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>

#include "msqa/text.hpp"

namespace msqa {

// Dichotomous (yes/no) questions get sentiment filtering; WH questions never
// do. The type is a total function of the question text.
enum class QuestionType { Dichotomous, WH };

inline const std::unordered_set<std::string>& wh_words() {
  static const std::unordered_set<std::string> kSet = {
      "what", "how", "when", "where", "which", "who", "whom", "whose", "why"};
  return kSet;
}

// WH iff the first non-punctuation token is a WH word; everything else
// (is/does/can/will/...) is dichotomous. Questions with no word tokens are
// dichotomous as well.
inline QuestionType classify_question(std::string_view question) {
  if (question.empty())
    throw std::invalid_argument("classify_question: empty question");
  std::string first = first_word_token(question);
  return wh_words().contains(first) ? QuestionType::WH
                                    : QuestionType::Dichotomous;
}

inline const char* to_string(QuestionType t) {
  return t == QuestionType::WH ? "wh" : "dichotomous";
}

}  // namespace msqa
