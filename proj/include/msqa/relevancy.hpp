#pragma once

// Candidate relevancy classifier.  A question/candidate pair is packed into
// one token sequence ([CLS] question [SEP] candidate [SEP]), run through the
// shared encoder stack, and the hidden state at the [CLS] position feeds a
// two-way head whose softmax gives P(relevant).
//
// The corpus loss is a mean of per-question means: each question's candidates
// are averaged first, then questions are averaged, so questions with many
// candidates do not dominate.  Training batches group whole questions for the
// same reason.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "msqa/corpus.hpp"
#include "msqa/metrics.hpp"
#include "msqa/minigen.hpp"

namespace msqa {

// How the candidate side of the pair is rendered:
//  - AnswerOnly: the candidate text by itself.
//  - QuestionAnswer: duplicate-QA candidates contribute their own question
//    before the answer, separated by [SEP].
// Spec candidates are always "key [SEP] value"; reviews are unaffected.
enum class PairVariant { AnswerOnly, QuestionAnswer };

inline std::string to_string(PairVariant v) {
  return v == PairVariant::AnswerOnly ? "answer_only" : "question_answer";
}

inline PairVariant pair_variant_from_string(std::string_view s) {
  if (s == "answer_only") return PairVariant::AnswerOnly;
  if (s == "question_answer") return PairVariant::QuestionAnswer;
  throw std::invalid_argument("unknown pair variant: " + std::string(s));
}

struct RelevancyConfig {
  int d_model = 64;
  int n_heads = 4;
  int layers = 2;
  int ffn_dim = 256;
  int max_seq_len = 128;
  double dropout = 0.0;
  std::uint64_t seed = 42;
  PairVariant variant = PairVariant::QuestionAnswer;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || layers < 1 || ffn_dim < 1)
      throw std::invalid_argument("RelevancyConfig: all dims must be >= 1");
    if (d_model % n_heads != 0)
      throw std::invalid_argument(
          "RelevancyConfig: d_model must be divisible by n_heads");
    if (max_seq_len < 8)
      throw std::invalid_argument("RelevancyConfig: max_seq_len must be >= 8");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("RelevancyConfig: dropout must be in [0,1)");
  }
};

template <typename S>
struct RelevancyWeights {
  using Scalar = S;

  minigen::Mat<S> embedding;  // vocab x d
  minigen::EncoderStack<S> encoder;
  minigen::Mat<S> cls_w;  // d x 2
  minigen::Mat<S> cls_b;  // 1 x 2

  template <typename F>
  void visit(F&& f) {
    f(std::string("embedding"), embedding);
    encoder.visit("encoder", f);
    f(std::string("cls.w"), cls_w);
    f(std::string("cls.b"), cls_b);
  }
};

template <typename S>
struct RelevancyModel {
  using Scalar = S;

  RelevancyConfig config;
  Vocabulary vocab;
  RelevancyWeights<S> weights;

  template <typename F>
  void visit(F&& f) {
    weights.visit(f);
  }
};

// The classification head starts at zero, so an untrained model scores every
// pair at exactly 0.5.
template <typename S>
RelevancyModel<S> init_relevancy(const RelevancyConfig& config,
                                 Vocabulary vocab) {
  config.validate();
  RelevancyModel<S> m;
  m.config = config;
  m.vocab = std::move(vocab);
  auto rng = minigen::make_rng(config.seed);
  m.weights.embedding.resize(m.vocab.size(), config.d_model);
  minigen::fill_normal(m.weights.embedding, rng, minigen::kInitStddev);
  m.weights.encoder.init(config.layers, config.d_model, config.ffn_dim, rng,
                         minigen::kInitStddev);
  m.weights.cls_w = minigen::Mat<S>::Zero(config.d_model, 2);
  m.weights.cls_b = minigen::Mat<S>::Zero(1, 2);
  return m;
}

// ---------------------------------------------------------------------------
// Pair encoding

// Candidate-side text segments; segments are joined by [SEP] in the pair.
inline std::vector<std::string> candidate_segments(const Candidate& c,
                                                   PairVariant variant) {
  switch (c.source) {
    case Source::Review:
      return {c.text};
    case Source::DuplicateQa:
      if (variant == PairVariant::QuestionAnswer)
        return {c.aux_text.value(), c.text};
      return {c.text};
    case Source::Spec:
      return {c.aux_text.value(), c.text};
  }
  throw std::logic_error("unreachable");
}

// [CLS] question [SEP] candidate [SEP], capped at max_seq_len.  Overflow is
// trimmed from the tail of the candidate side first, then from the tail of
// the question; the structural tokens always survive.
inline std::vector<int> encode_pair(const std::string& question,
                                    const Candidate& candidate,
                                    const Vocabulary& vocab,
                                    const RelevancyConfig& config) {
  std::vector<int> q_ids = tokenize(question, vocab);

  const std::vector<std::string> segments =
      candidate_segments(candidate, config.variant);
  std::vector<int> c_ids;
  for (size_t i = 0; i < segments.size(); ++i) {
    if (i > 0) c_ids.push_back(kSepId);
    for (int id : tokenize(segments[i], vocab)) c_ids.push_back(id);
  }

  const size_t budget = static_cast<size_t>(config.max_seq_len) - 3;
  if (q_ids.size() + c_ids.size() > budget) {
    if (q_ids.size() >= budget) {
      q_ids.resize(budget);
      c_ids.clear();
    } else {
      c_ids.resize(budget - q_ids.size());
    }
  }

  std::vector<int> ids;
  ids.reserve(q_ids.size() + c_ids.size() + 3);
  ids.push_back(kClsId);
  ids.insert(ids.end(), q_ids.begin(), q_ids.end());
  ids.push_back(kSepId);
  ids.insert(ids.end(), c_ids.begin(), c_ids.end());
  ids.push_back(kSepId);
  return ids;
}

// ---------------------------------------------------------------------------
// Forward / loss

template <typename S>
struct PairForward {
  minigen::Mat<S> probs;   // 1 x 2, softmax over {not relevant, relevant}
  minigen::Mat<S> pooled;  // 1 x d, [CLS] hidden state
};

template <typename S>
PairForward<S> relevancy_forward(const RelevancyModel<S>& model,
                                 const std::vector<int>& ids,
                                 minigen::EncoderStackCache<S>* cache = nullptr,
                                 const minigen::DropoutState<S>& drop = {}) {
  minigen::Mat<S> h = minigen::run_encoder_stack(
      model.weights.embedding, model.weights.encoder, ids,
      model.config.d_model, model.config.n_heads, drop, cache);
  PairForward<S> out;
  out.pooled = h.row(0);
  minigen::Mat<S> logits = out.pooled * model.weights.cls_w + model.weights.cls_b;
  const S m = logits.maxCoeff();
  minigen::Mat<S> e = (logits.array() - m).exp().matrix();
  out.probs = e / e.sum();
  return out;
}

template <typename S>
S score_pair(const RelevancyModel<S>& model, const std::string& question,
             const Candidate& candidate) {
  const std::vector<int> ids =
      encode_pair(question, candidate, model.vocab, model.config);
  return relevancy_forward(model, ids).probs(1);
}

template <typename S>
std::vector<double> score_candidates(const RelevancyModel<S>& model,
                                     const QuestionRecord& record) {
  std::vector<double> scores;
  scores.reserve(record.candidates.size());
  for (const Candidate& c : record.candidates)
    scores.push_back(static_cast<double>(score_pair(model, record.question, c)));
  return scores;
}

// Cross entropy of one labeled pair.
template <typename S>
S pair_loss(const PairForward<S>& fwd, bool relevant) {
  return -std::log(fwd.probs(relevant ? 1 : 0));
}

// Mean over questions of the mean over each question's candidates.
// Questions without candidates are skipped (they contribute no pairs).
template <typename S>
double relevancy_corpus_loss(const RelevancyModel<S>& model,
                             const std::vector<QuestionRecord>& records) {
  double total = 0.0;
  size_t counted = 0;
  for (const QuestionRecord& rec : records) {
    if (rec.candidates.empty()) continue;
    double q_total = 0.0;
    for (const Candidate& c : rec.candidates) {
      if (!c.relevance_label.has_value())
        throw std::invalid_argument("relevancy loss requires labels: question " +
                                    rec.id);
      const std::vector<int> ids =
          encode_pair(rec.question, c, model.vocab, model.config);
      q_total += static_cast<double>(
          pair_loss(relevancy_forward(model, ids), *c.relevance_label));
    }
    total += q_total / static_cast<double>(rec.candidates.size());
    ++counted;
  }
  if (counted == 0)
    throw std::invalid_argument("relevancy loss: no labeled candidates");
  return total / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Training

template <typename S>
void pair_loss_and_grad(const RelevancyModel<S>& model,
                        const std::vector<int>& ids, bool relevant, S weight,
                        RelevancyWeights<S>& grad,
                        const minigen::DropoutState<S>& drop, double& loss_out) {
  minigen::EncoderStackCache<S> cache;
  PairForward<S> fwd = relevancy_forward(model, ids, &cache, drop);
  loss_out = static_cast<double>(pair_loss(fwd, relevant));

  minigen::Mat<S> dlogits = fwd.probs;
  dlogits(relevant ? 1 : 0) -= S(1);
  dlogits *= weight;

  grad.cls_b += dlogits;
  grad.cls_w += fwd.pooled.transpose() * dlogits;
  minigen::Mat<S> dpooled = dlogits * model.weights.cls_w.transpose();

  minigen::Mat<S> dh = minigen::Mat<S>::Zero(
      static_cast<Eigen::Index>(ids.size()), model.config.d_model);
  dh.row(0) = dpooled;
  minigen::run_encoder_stack_backward(grad.embedding, model.weights.encoder,
                                      grad.encoder, cache, model.config.d_model,
                                      model.config.n_heads, dh);
}

struct RelTrainConfig {
  int epochs = 5;
  int batch_size = 32;  // questions per batch
  double lr = 1e-3;
  double clip_norm = 1.0;
  double dropout = 0.0;
  std::uint64_t seed = 42;
};

// Returns the per-epoch corpus loss computed from the batches as traversed
// (sum of per-question means divided by the number of questions).
template <typename S>
std::vector<double> train_relevancy(
    RelevancyModel<S>& model, const std::vector<QuestionRecord>& records,
    const RelTrainConfig& config,
    const std::function<void(int, double)>& on_epoch = {}) {
  if (config.batch_size < 1)
    throw std::invalid_argument("train_relevancy: batch_size must be >= 1");
  std::vector<size_t> usable;
  for (size_t i = 0; i < records.size(); ++i)
    if (!records[i].candidates.empty()) usable.push_back(i);
  if (usable.empty())
    throw std::invalid_argument("train_relevancy: no questions with candidates");

  minigen::AdamOptimizer<RelevancyWeights<S>> opt(
      model.weights, minigen::AdamConfig{.lr = config.lr});

  std::vector<double> trace;
  trace.reserve(static_cast<size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto rng = minigen::make_rng(config.seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(usable.begin(), usable.end(), rng);
    minigen::DropoutState<S> drop{static_cast<S>(config.dropout), &rng};

    double loss_sum = 0.0;
    size_t questions_seen = 0;
    for (size_t start = 0; start < usable.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(
          usable.size(), start + static_cast<size_t>(config.batch_size));
      const S question_weight = S(1) / S(end - start);

      RelevancyWeights<S> grads = minigen::zeros_like(model.weights);
      double batch_loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        const QuestionRecord& rec = records[usable[i]];
        const S pair_weight =
            question_weight / S(rec.candidates.size());
        double q_loss = 0.0;
        for (const Candidate& c : rec.candidates) {
          if (!c.relevance_label.has_value())
            throw std::invalid_argument(
                "train_relevancy: unlabeled candidate in question " + rec.id);
          const std::vector<int> ids =
              encode_pair(rec.question, c, model.vocab, model.config);
          double pair_ce = 0.0;
          pair_loss_and_grad(model, ids, *c.relevance_label, pair_weight,
                             grads, drop, pair_ce);
          q_loss += pair_ce;
        }
        batch_loss += q_loss / static_cast<double>(rec.candidates.size());
      }
      batch_loss /= static_cast<double>(end - start);
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train_relevancy: non-finite loss at epoch " << epoch
            << ", batch starting at question " << start
            << " (lr=" << config.lr << "); lower the learning rate";
        throw std::runtime_error(msg.str());
      }
      minigen::clip_gradients(grads, config.clip_norm);
      opt.step(model.weights, grads);

      loss_sum += batch_loss * static_cast<double>(end - start);
      questions_seen += end - start;
    }
    const double epoch_loss = loss_sum / static_cast<double>(questions_seen);
    trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Evaluation

// Pair-level classification metrics at the given probability threshold.
template <typename S>
ClassificationMetrics evaluate_relevancy(
    const RelevancyModel<S>& model, const std::vector<QuestionRecord>& records,
    double threshold = 0.5) {
  std::vector<bool> predictions, labels;
  for (const QuestionRecord& rec : records)
    for (const Candidate& c : rec.candidates) {
      if (!c.relevance_label.has_value())
        throw std::invalid_argument(
            "evaluate_relevancy: unlabeled candidate in question " + rec.id);
      predictions.push_back(
          static_cast<double>(score_pair(model, rec.question, c)) >= threshold);
      labels.push_back(*c.relevance_label);
    }
  return classification_metrics(predictions, labels);
}

}  // namespace msqa
