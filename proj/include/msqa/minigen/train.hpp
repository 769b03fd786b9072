#pragma once

// Optimization utilities shared by the generator and the relevancy model:
// Adam with bias correction, global-norm gradient clipping, the generator
// training loop, and a finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "msqa/minigen/model.hpp"
#include "msqa/minigen/params.hpp"

namespace msqa::minigen {

// Pointers to every tensor of a pack in visit order; lets the optimizer walk
// several packs (params, grads, moments) in lockstep.
template <typename Pack>
std::vector<Mat<typename Pack::Scalar>*> collect_tensors(Pack& pack) {
  using S = typename Pack::Scalar;
  std::vector<Mat<S>*> out;
  pack.visit([&out](const std::string&, Mat<S>& t) { out.push_back(&t); });
  return out;
}

template <typename Pack>
double global_grad_norm(const Pack& grads) {
  return std::sqrt(squared_norm(grads));
}

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
template <typename Pack>
double clip_gradients(Pack& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    grads.visit([scale](const std::string&, auto& t) {
      using TS = typename std::decay_t<decltype(t)>::Scalar;
      t *= static_cast<TS>(scale);
    });
  }
  return norm;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Pack>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(const Pack& shape, AdamConfig config = {})
      : config_(config), m_(zeros_like(shape)), v_(zeros_like(shape)) {}

  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  template <typename GradPack>
  void step(Pack& params, GradPack& grads) {
    ++t_;
    auto ps = collect_tensors(params);
    auto gs = collect_tensors(grads);
    auto ms = collect_tensors(m_);
    auto vs = collect_tensors(v_);
    if (ps.size() != gs.size())
      throw std::invalid_argument("Adam: parameter/gradient shape mismatch");
    using S = typename Pack::Scalar;
    const S b1 = static_cast<S>(config_.beta1);
    const S b2 = static_cast<S>(config_.beta2);
    const S corr1 = S(1) - static_cast<S>(std::pow(config_.beta1, t_));
    const S corr2 = S(1) - static_cast<S>(std::pow(config_.beta2, t_));
    const S lr = static_cast<S>(config_.lr);
    const S eps = static_cast<S>(config_.eps);
    for (size_t i = 0; i < ps.size(); ++i) {
      auto& p = *ps[i];
      auto& g = *gs[i];
      auto& m = *ms[i];
      auto& v = *vs[i];
      m = b1 * m + (S(1) - b1) * g;
      v = (b2 * v.array() + (S(1) - b2) * g.array().square()).matrix();
      const auto mhat = m.array() / corr1;
      const auto vhat = v.array() / corr2;
      p.array() -= lr * mhat / (vhat.sqrt() + eps);
    }
  }

 private:
  AdamConfig config_;
  Pack m_, v_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Generator training

struct GenTrainConfig {
  int epochs = 25;
  int batch_size = 32;
  double lr = 5e-5;
  double clip_norm = 1.0;
  double dropout = 0.0;
  std::uint64_t seed = 42;
};

// Mean per-example loss of each epoch, computed from the training batches as
// traversed (exact mean over examples; the last short batch is not
// over-weighted).  Aborts with a diagnostic on non-finite loss.
template <typename S>
std::vector<double> train_generator(
    GeneratorParams<S>& params, const std::vector<SequencePair>& data,
    const GenTrainConfig& config,
    const std::function<void(int, double)>& on_epoch = {}) {
  if (data.empty()) throw std::invalid_argument("train_generator: no data");
  if (config.batch_size < 1)
    throw std::invalid_argument("train_generator: batch_size must be >= 1");

  AdamOptimizer<TransformerWeights<S>> opt(params.weights,
                                           AdamConfig{.lr = config.lr});
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});

  std::vector<double> trace;
  trace.reserve(static_cast<size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto rng = make_rng(config.seed + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    DropoutState<S> drop{static_cast<S>(config.dropout), &rng};

    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<SequencePair> batch;
      batch.reserve(end - start);
      for (size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);

      TransformerWeights<S> grads = zeros_like(params.weights);
      const S batch_loss = batch_loss_and_grad(params, batch, grads, drop);
      if (!std::isfinite(static_cast<double>(batch_loss))) {
        std::ostringstream msg;
        msg << "train_generator: non-finite loss at epoch " << epoch
            << ", batch starting at example " << start
            << " (lr=" << config.lr << "); lower the learning rate";
        throw std::runtime_error(msg.str());
      }
      clip_gradients(grads, config.clip_norm);
      opt.step(params.weights, grads);

      loss_sum += static_cast<double>(batch_loss) *
                  static_cast<double>(end - start);
      seen += end - start;
    }
    const double epoch_loss = loss_sum / static_cast<double>(seen);
    trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
};

// Central differences at the given flat parameter indices.  Relative error
// uses a small floor so near-zero gradient pairs do not blow up the ratio.
template <typename Pack, typename GradPack, typename LossFn>
GradCheckResult gradient_check(Pack& params, const GradPack& analytic,
                               LossFn&& loss, const std::vector<std::size_t>& indices,
                               double eps = 1e-5) {
  GradCheckResult result;
  for (std::size_t idx : indices) {
    add_flat(params, idx, eps);
    const double lp = static_cast<double>(loss());
    add_flat(params, idx, -2.0 * eps);
    const double lm = static_cast<double>(loss());
    add_flat(params, idx, eps);
    const double numeric = (lp - lm) / (2.0 * eps);
    const double exact = get_flat(analytic, idx);
    const double denom = std::max(std::abs(numeric) + std::abs(exact), 1e-6);
    const double rel = std::abs(numeric - exact) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = idx;
    }
    ++result.checked;
  }
  return result;
}

// Deterministic sample of distinct flat indices in [0, count).
inline std::vector<std::size_t> sample_indices(std::size_t count,
                                               std::size_t how_many,
                                               std::uint64_t seed) {
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto rng = make_rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(count, how_many));
  return all;
}

}  // namespace msqa::minigen
