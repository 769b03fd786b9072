#pragma once

// HTTP front end.  AnswerService owns the loaded models and turns a JSON
// request body into a pipeline answer; the httplib wiring is a thin layer on
// top so the request handling is testable without sockets.
//
// POST /answer  {"question": "...", "candidates": [...]} -> answer + trace
// GET  /health  -> model fingerprints

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "msqa/ambiguity.hpp"
#include "msqa/artifact.hpp"
#include "msqa/corpus.hpp"
#include "msqa/pipeline.hpp"

namespace msqa {

inline constexpr std::size_t kMaxPayloadBytes = 1 << 20;  // 1 MiB

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

template <typename S>
class AnswerService {
 public:
  // The relevancy model is optional: without it the rel/full variants fall
  // back to the lexical scorer.  Models trained on different vocabularies
  // refuse to combine.
  AnswerService(minigen::GeneratorParams<S> generator,
                std::optional<RelevancyModel<S>> relevancy,
                SentimentClassifier sentiment, PipelineOptions options)
      : generator_(std::move(generator)),
        relevancy_(std::move(relevancy)),
        sentiment_(std::move(sentiment)),
        options_(options) {
    options_.validate();
    if (relevancy_ &&
        relevancy_->vocab.hash() != generator_.vocab.hash())
      throw std::runtime_error(
          "generator and relevancy artifacts were built from different "
          "vocabularies; refusing to combine them");
    generator_checksum_ = minigen::parameter_checksum(generator_);
    if (relevancy_) relevancy_checksum_ = minigen::parameter_checksum(*relevancy_);
  }

  ServiceResponse handle_answer(const std::string& body) const {
    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded())
      return {400, {{"error", "request body is not valid JSON"}}};
    if (!j.is_object())
      return {400, {{"error", "request body must be a JSON object"}}};
    if (!j.contains("question") || !j["question"].is_string() ||
        j["question"].get<std::string>().empty())
      return {400, {{"error", "missing or empty field 'question'"}}};

    QuestionRecord record;
    record.id = j.value("id", std::string("request"));
    record.question = j["question"].get<std::string>();
    if (j.contains("candidates")) {
      if (!j["candidates"].is_array())
        return {400, {{"error", "field 'candidates' must be an array"}}};
      std::size_t index = 0;
      for (nlohmann::json cj : j["candidates"]) {
        if (cj.is_object() && !cj.contains("id"))
          cj["id"] = "c" + std::to_string(index + 1);
        try {
          record.candidates.push_back(detail::parse_candidate(
              cj, CorpusTask::Generation, "body", 0, index));
        } catch (const std::exception& e) {
          std::string what = e.what();
          // Drop the "body:0: " location prefix; requests have no line.
          if (const auto colon = what.find(": "); colon != std::string::npos)
            what = what.substr(colon + 2);
          return {400, {{"error", what}}};
        }
        ++index;
      }
    }

    try {
      record.qtype = classify_question(record.question);
      AnswerResult result = answer_question(record, generator_, options_,
                                            scorer(), &sentiment_);
      return {200,
              {{"answer", result.answer}, {"trace", trace_to_json(result.trace)}}};
    } catch (const std::exception& e) {
      return {500, {{"error", e.what()}}};
    }
  }

  nlohmann::json health() const {
    nlohmann::json j{
        {"status", "ok"},
        {"artifact_version", kArtifactVersion},
        {"variant", to_string(options_.variant)},
        {"top_k", options_.top_k},
        {"generator",
         {{"vocab_hash", std::to_string(generator_.vocab.hash())},
          {"checksum", std::to_string(generator_checksum_)},
          {"d_model", generator_.config.d_model}}}};
    if (relevancy_) {
      j["relevancy"] = {
          {"vocab_hash", std::to_string(relevancy_->vocab.hash())},
          {"checksum", std::to_string(relevancy_checksum_)},
          {"variant", to_string(relevancy_->config.variant)}};
    } else {
      j["relevancy"] = nullptr;
    }
    return j;
  }

  // Registers routes and limits on an httplib server.
  void attach(httplib::Server& server) const {
    server.set_payload_max_length(kMaxPayloadBytes);
    server.Post("/answer", [this](const httplib::Request& req,
                                  httplib::Response& res) {
      const ServiceResponse out = handle_answer(req.body);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    });
    server.Get("/health",
               [this](const httplib::Request&, httplib::Response& res) {
                 res.set_content(health().dump(), "application/json");
               });
    server.set_error_handler([](const httplib::Request&,
                                httplib::Response& res) {
      if (!res.body.empty()) return;  // handler already wrote a body
      nlohmann::json j{{"error", httplib::status_message(res.status)}};
      if (res.status == httplib::StatusCode::PayloadTooLarge_413)
        j["error"] = "payload exceeds the " +
                     std::to_string(kMaxPayloadBytes) + " byte limit";
      res.set_content(j.dump(), "application/json");
    });
  }

  const PipelineOptions& options() const { return options_; }

 private:
  ScoreFn scorer() const {
    if (options_.variant == PipelineVariant::GenerationOnly) return ScoreFn{};
    if (relevancy_) return make_trained_scorer(*relevancy_);
    return make_lexical_scorer();
  }

  minigen::GeneratorParams<S> generator_;
  std::optional<RelevancyModel<S>> relevancy_;
  SentimentClassifier sentiment_;
  PipelineOptions options_;
  std::uint64_t generator_checksum_ = 0;
  std::uint64_t relevancy_checksum_ = 0;
};

}  // namespace msqa
