#pragma once

// Autoregressive decoding.  Both strategies drive decode_step, which
// recomputes the whole prefix per step, so their probabilities agree exactly
// with the teacher-forced pass.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "msqa/minigen/model.hpp"

namespace msqa::minigen {

enum class DecodeStrategy { Greedy, Beam };

inline std::string to_string(DecodeStrategy s) {
  return s == DecodeStrategy::Greedy ? "greedy" : "beam";
}

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::Greedy;
  int beam_width = 4;
  // Hypothesis score is log_prob / steps^length_penalty; 0 disables length
  // normalization, making beam_width=1 rank identically to greedy.
  double length_penalty = 0.0;
  // 0 means "up to the model's max_tgt_len".
  int max_len = 0;

  void validate() const {
    if (beam_width < 1)
      throw std::invalid_argument("DecodeConfig: beam_width must be >= 1");
    if (length_penalty < 0.0)
      throw std::invalid_argument(
          "DecodeConfig: length_penalty must be >= 0");
    if (max_len < 0)
      throw std::invalid_argument("DecodeConfig: max_len must be >= 0");
  }
};

struct DecodeResult {
  std::vector<int> ids;  // generated tokens, BOS/EOS excluded
  double log_prob = 0.0; // sum of chosen-token log probs, EOS step included
  double score = 0.0;
  bool reached_eos = false;
};

namespace detail {

inline double length_normalized(double log_prob, size_t steps, double alpha) {
  if (alpha == 0.0 || steps == 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(steps), alpha);
}

template <typename S>
Mat<S> log_softmax_row(const Mat<S>& logits_row) {
  const S m = logits_row.maxCoeff();
  Mat<S> shifted = (logits_row.array() - m).matrix();
  const S lse = std::log(shifted.array().exp().sum());
  return (shifted.array() - lse).matrix();
}

}  // namespace detail

template <typename S>
DecodeResult greedy_decode(const GeneratorParams<S>& params,
                           const Mat<S>& memory, int max_prefix_len) {
  DecodeResult result;
  std::vector<int> prefix = {kBosId};
  while (static_cast<int>(prefix.size()) < max_prefix_len) {
    Mat<S> logits = decode_step(params, memory, prefix);
    Mat<S> logp = detail::log_softmax_row(logits);
    Eigen::Index best;
    logp.maxCoeff(&best);
    result.log_prob += static_cast<double>(logp(best));
    if (static_cast<int>(best) == kEosId) {
      result.reached_eos = true;
      break;
    }
    prefix.push_back(static_cast<int>(best));
  }
  result.ids.assign(prefix.begin() + 1, prefix.end());
  result.score = result.log_prob;
  return result;
}

template <typename S>
DecodeResult beam_decode(const GeneratorParams<S>& params, const Mat<S>& memory,
                         int max_prefix_len, int beam_width, double alpha) {
  struct Hyp {
    std::vector<int> prefix;  // starts with BOS
    double log_prob = 0.0;
  };
  auto steps_taken = [](const Hyp& h, bool finished) {
    // Tokens emitted after BOS; a finished hypothesis also counts its EOS.
    return h.prefix.size() - 1 + (finished ? 1 : 0);
  };

  std::vector<Hyp> beams = {Hyp{{kBosId}, 0.0}};
  std::vector<DecodeResult> finished;

  while (!beams.empty()) {
    std::vector<Hyp> expanded;
    for (const Hyp& hyp : beams) {
      Mat<S> logits = decode_step(params, memory, hyp.prefix);
      Mat<S> logp = detail::log_softmax_row(logits);
      std::vector<int> order(static_cast<size_t>(logp.size()));
      std::iota(order.begin(), order.end(), 0);
      const int take = std::min<int>(beam_width, static_cast<int>(logp.size()));
      std::partial_sort(order.begin(), order.begin() + take, order.end(),
                        [&logp](int a, int b) {
                          if (logp(a) != logp(b)) return logp(a) > logp(b);
                          return a < b;
                        });
      for (int i = 0; i < take; ++i) {
        const int tok = order[static_cast<size_t>(i)];
        Hyp next = hyp;
        next.log_prob += static_cast<double>(logp(tok));
        if (tok == kEosId) {
          DecodeResult done;
          done.ids.assign(next.prefix.begin() + 1, next.prefix.end());
          done.log_prob = next.log_prob;
          done.score = detail::length_normalized(
              next.log_prob, steps_taken(hyp, true), alpha);
          done.reached_eos = true;
          finished.push_back(std::move(done));
        } else {
          next.prefix.push_back(tok);
          expanded.push_back(std::move(next));
        }
      }
    }

    std::stable_sort(expanded.begin(), expanded.end(),
                     [](const Hyp& a, const Hyp& b) {
                       return a.log_prob > b.log_prob;
                     });
    if (expanded.size() > static_cast<size_t>(beam_width))
      expanded.resize(static_cast<size_t>(beam_width));
    beams = std::move(expanded);

    // Enough finished hypotheses to cover the beam, or length budget hit.
    if (finished.size() >= static_cast<size_t>(beam_width)) break;
    if (!beams.empty() &&
        static_cast<int>(beams.front().prefix.size()) >= max_prefix_len) {
      for (const Hyp& hyp : beams) {
        DecodeResult open;
        open.ids.assign(hyp.prefix.begin() + 1, hyp.prefix.end());
        open.log_prob = hyp.log_prob;
        open.score = detail::length_normalized(hyp.log_prob,
                                               steps_taken(hyp, false), alpha);
        open.reached_eos = false;
        finished.push_back(std::move(open));
      }
      break;
    }
  }

  if (finished.empty()) return DecodeResult{};
  auto best = std::max_element(finished.begin(), finished.end(),
                               [](const DecodeResult& a, const DecodeResult& b) {
                                 if (a.score != b.score) return a.score < b.score;
                                 return a.ids.size() > b.ids.size();
                               });
  return *best;
}

template <typename S>
DecodeResult generate(const GeneratorParams<S>& params,
                      const std::vector<int>& src,
                      const DecodeConfig& config = {}) {
  config.validate();
  Mat<S> memory = encode(params, src);
  int max_prefix = params.config.max_tgt_len;
  if (config.max_len > 0)
    max_prefix = std::min(max_prefix, config.max_len + 1);  // +1 for BOS
  if (config.strategy == DecodeStrategy::Greedy)
    return greedy_decode(params, memory, max_prefix);
  return beam_decode(params, memory, max_prefix, config.beam_width,
                     config.length_penalty);
}

}  // namespace msqa::minigen
