#pragma once

// Forward and backward passes for the encoder-decoder generator.
//
// Every forward function takes an optional cache pointer.  Loss-only and
// inference paths pass nullptr and skip all bookkeeping; training paths
// supply caches and then drive the matching *_backward function, which
// accumulates into a gradient pack of the same shape as the parameters
// (see zeros_like in params.hpp).

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "msqa/minigen/core.hpp"
#include "msqa/minigen/params.hpp"
#include "msqa/text.hpp"

namespace msqa::minigen {

// ---------------------------------------------------------------------------
// Dropout

// Inverted dropout: surviving activations are scaled by 1/(1-rate) so the
// expected forward signal is unchanged and inference needs no rescaling.
template <typename S>
struct DropoutCache {
  bool active = false;
  Mat<S> mask;
};

template <typename S>
struct DropoutState {
  S rate = S(0);
  std::mt19937_64* rng = nullptr;  // null disables dropout (inference)

  bool enabled() const { return rate > S(0) && rng != nullptr; }
};

template <typename S>
void dropout_forward(Mat<S>& x, const DropoutState<S>& state,
                     DropoutCache<S>* cache) {
  if (!state.enabled()) {
    if (cache) cache->active = false;
    return;
  }
  std::bernoulli_distribution keep(1.0 - static_cast<double>(state.rate));
  const S scale = S(1) / (S(1) - state.rate);
  Mat<S> mask(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      mask(r, c) = keep(*state.rng) ? scale : S(0);
  x = x.cwiseProduct(mask);
  if (cache) {
    cache->active = true;
    cache->mask = std::move(mask);
  }
}

template <typename S>
void dropout_backward(Mat<S>& dy, const DropoutCache<S>& cache) {
  if (cache.active) dy = dy.cwiseProduct(cache.mask);
}

// ---------------------------------------------------------------------------
// Layer norm

inline constexpr double kLayerNormEps = 1e-5;

template <typename S>
struct LayerNormCache {
  Mat<S> xhat;        // normalized input, pre gain/bias
  ColVec<S> inv_std;  // one entry per row
};

template <typename S>
Mat<S> ln_forward(const LayerNormParams<S>& p, const Mat<S>& x,
                  LayerNormCache<S>* cache) {
  const Eigen::Index d = x.cols();
  Mat<S> xhat(x.rows(), d);
  ColVec<S> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().sum() / S(d);
    const S inv = S(1) / std::sqrt(var + S(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mean) * inv;
    inv_std(r) = inv;
  }
  Mat<S> y(x.rows(), d);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    y.row(r) = xhat.row(r).cwiseProduct(p.gain.row(0)) + p.bias.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename S>
Mat<S> ln_backward(const LayerNormParams<S>& p, LayerNormParams<S>& grad,
                   const LayerNormCache<S>& cache, const Mat<S>& dy) {
  const Eigen::Index d = dy.cols();
  grad.gain += dy.cwiseProduct(cache.xhat).colwise().sum();
  grad.bias += dy.colwise().sum();
  Mat<S> dx(dy.rows(), d);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const auto dxhat = dy.row(r).cwiseProduct(p.gain.row(0));
    const S m1 = dxhat.mean();
    const S m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
    dx.row(r) =
        cache.inv_std(r) *
        (dxhat.array() - m1 - cache.xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Multi-head attention

template <typename S>
struct AttentionCache {
  Mat<S> q_in, kv_in;        // sublayer inputs (post layer norm)
  Mat<S> q, k, v;            // projected, all heads concatenated
  std::vector<Mat<S>> probs; // per-head softmax rows, masked entries exactly 0
  Mat<S> concat;             // per-head outputs reassembled, pre output proj
};

// q_in: Tq x d, kv_in: Tk x d.  With causal=true (self attention only,
// Tq == Tk) row t attends to positions 0..t.
template <typename S>
Mat<S> attn_forward(const AttentionParams<S>& p, const Mat<S>& q_in,
                    const Mat<S>& kv_in, int n_heads, bool causal,
                    AttentionCache<S>* cache) {
  const Eigen::Index d = q_in.cols();
  const Eigen::Index dh = d / n_heads;
  const Eigen::Index tq = q_in.rows();
  const Eigen::Index tk = kv_in.rows();
  if (causal && tq != tk)
    throw std::invalid_argument("causal attention requires square scores");

  Mat<S> q = q_in * p.wq;
  q.rowwise() += p.bq.row(0);
  Mat<S> k = kv_in * p.wk;
  k.rowwise() += p.bk.row(0);
  Mat<S> v = kv_in * p.wv;
  v.rowwise() += p.bv.row(0);

  const S scale = S(1) / std::sqrt(S(dh));
  Mat<S> concat(tq, d);
  std::vector<Mat<S>> probs;
  if (cache) probs.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    const auto vh = v.middleCols(h * dh, dh);
    Mat<S> scores = qh * kh.transpose() * scale;
    Mat<S> a = causal
                   ? softmax_rows_masked<S>(
                         scores, [](Eigen::Index r) { return r + 1; })
                   : softmax_rows<S>(scores);
    concat.middleCols(h * dh, dh) = a * vh;
    if (cache) probs.push_back(std::move(a));
  }

  Mat<S> y = concat * p.wo;
  y.rowwise() += p.bo.row(0);
  if (cache) {
    cache->q_in = q_in;
    cache->kv_in = kv_in;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->concat = std::move(concat);
  }
  return y;
}

// Returns gradients w.r.t. both sublayer inputs.  Masked softmax entries are
// exactly zero, so the softmax backward needs no separate mask handling.
template <typename S>
void attn_backward(const AttentionParams<S>& p, AttentionParams<S>& grad,
                   const AttentionCache<S>& cache, const Mat<S>& dy,
                   int n_heads, Mat<S>& dq_in, Mat<S>& dkv_in) {
  const Eigen::Index d = dy.cols();
  const Eigen::Index dh = d / n_heads;
  const Eigen::Index tq = cache.q_in.rows();
  const Eigen::Index tk = cache.kv_in.rows();
  const S scale = S(1) / std::sqrt(S(dh));

  grad.wo += cache.concat.transpose() * dy;
  grad.bo += dy.colwise().sum();
  Mat<S> dconcat = dy * p.wo.transpose();

  Mat<S> dq = Mat<S>::Zero(tq, d);
  Mat<S> dk = Mat<S>::Zero(tk, d);
  Mat<S> dv = Mat<S>::Zero(tk, d);
  for (int h = 0; h < n_heads; ++h) {
    const Mat<S>& a = cache.probs[static_cast<size_t>(h)];
    const auto qh = cache.q.middleCols(h * dh, dh);
    const auto kh = cache.k.middleCols(h * dh, dh);
    const auto vh = cache.v.middleCols(h * dh, dh);
    const auto doh = dconcat.middleCols(h * dh, dh);

    Mat<S> da = doh * vh.transpose();
    dv.middleCols(h * dh, dh) = a.transpose() * doh;

    const ColVec<S> row_dot = da.cwiseProduct(a).rowwise().sum();
    Mat<S> ds = a.cwiseProduct(da - row_dot.replicate(1, tk));

    dq.middleCols(h * dh, dh) = ds * kh * scale;
    dk.middleCols(h * dh, dh) = ds.transpose() * qh * scale;
  }

  grad.wq += cache.q_in.transpose() * dq;
  grad.bq += dq.colwise().sum();
  grad.wk += cache.kv_in.transpose() * dk;
  grad.bk += dk.colwise().sum();
  grad.wv += cache.kv_in.transpose() * dv;
  grad.bv += dv.colwise().sum();

  dq_in = dq * p.wq.transpose();
  dkv_in = dk * p.wk.transpose() + dv * p.wv.transpose();
}

// ---------------------------------------------------------------------------
// Feed-forward

template <typename S>
struct FfnCache {
  Mat<S> x_in;
  Mat<S> pre_act;
  Mat<S> act;
};

template <typename S>
Mat<S> ffn_forward(const FfnParams<S>& p, const Mat<S>& x,
                   FfnCache<S>* cache) {
  Mat<S> pre = x * p.w1;
  pre.rowwise() += p.b1.row(0);
  Mat<S> act = pre.unaryExpr([](S v) { return gelu(v); });
  Mat<S> y = act * p.w2;
  y.rowwise() += p.b2.row(0);
  if (cache) {
    cache->x_in = x;
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
  }
  return y;
}

template <typename S>
Mat<S> ffn_backward(const FfnParams<S>& p, FfnParams<S>& grad,
                    const FfnCache<S>& cache, const Mat<S>& dy) {
  grad.w2 += cache.act.transpose() * dy;
  grad.b2 += dy.colwise().sum();
  Mat<S> dact = dy * p.w2.transpose();
  Mat<S> dpre = dact.cwiseProduct(
      cache.pre_act.unaryExpr([](S v) { return gelu_derivative(v); }));
  grad.w1 += cache.x_in.transpose() * dpre;
  grad.b1 += dpre.colwise().sum();
  return dpre * p.w1.transpose();
}

// ---------------------------------------------------------------------------
// Encoder layer / stack.  Pre-norm residual blocks: x + Sub(LN(x)).

template <typename S>
struct EncoderLayerCache {
  LayerNormCache<S> ln_attn, ln_ffn;
  AttentionCache<S> attn;
  FfnCache<S> ffn;
  DropoutCache<S> drop_attn, drop_ffn;
};

template <typename S>
Mat<S> encoder_layer_forward(const EncoderLayerParams<S>& p, const Mat<S>& x,
                             int n_heads, const DropoutState<S>& drop,
                             EncoderLayerCache<S>* cache) {
  Mat<S> normed = ln_forward(p.ln_attn, x, cache ? &cache->ln_attn : nullptr);
  Mat<S> a = attn_forward(p.attn, normed, normed, n_heads, false,
                          cache ? &cache->attn : nullptr);
  dropout_forward(a, drop, cache ? &cache->drop_attn : nullptr);
  Mat<S> x1 = x + a;

  Mat<S> normed2 = ln_forward(p.ln_ffn, x1, cache ? &cache->ln_ffn : nullptr);
  Mat<S> f = ffn_forward(p.ffn, normed2, cache ? &cache->ffn : nullptr);
  dropout_forward(f, drop, cache ? &cache->drop_ffn : nullptr);
  return x1 + f;
}

template <typename S>
Mat<S> encoder_layer_backward(const EncoderLayerParams<S>& p,
                              EncoderLayerParams<S>& grad,
                              const EncoderLayerCache<S>& cache, int n_heads,
                              const Mat<S>& d_out) {
  Mat<S> df = d_out;
  dropout_backward(df, cache.drop_ffn);
  Mat<S> dnormed2 = ffn_backward(p.ffn, grad.ffn, cache.ffn, df);
  Mat<S> dx1 = d_out + ln_backward(p.ln_ffn, grad.ln_ffn, cache.ln_ffn, dnormed2);

  Mat<S> da = dx1;
  dropout_backward(da, cache.drop_attn);
  Mat<S> dq_in, dkv_in;
  attn_backward(p.attn, grad.attn, cache.attn, da, n_heads, dq_in, dkv_in);
  Mat<S> dnormed = dq_in + dkv_in;
  return dx1 + ln_backward(p.ln_attn, grad.ln_attn, cache.ln_attn, dnormed);
}

template <typename S>
struct EncoderStackCache {
  std::vector<int> ids;
  DropoutCache<S> drop_embed;
  std::vector<EncoderLayerCache<S>> layers;
  LayerNormCache<S> final_norm;
};

// ---------------------------------------------------------------------------
// Decoder layer / stack

template <typename S>
struct DecoderLayerCache {
  LayerNormCache<S> ln_self, ln_cross, ln_ffn;
  AttentionCache<S> self_attn, cross_attn;
  FfnCache<S> ffn;
  DropoutCache<S> drop_self, drop_cross, drop_ffn;
};

template <typename S>
Mat<S> decoder_layer_forward(const DecoderLayerParams<S>& p, const Mat<S>& y,
                             const Mat<S>& memory, int n_heads,
                             const DropoutState<S>& drop,
                             DecoderLayerCache<S>* cache) {
  Mat<S> normed = ln_forward(p.ln_self, y, cache ? &cache->ln_self : nullptr);
  Mat<S> s = attn_forward(p.self_attn, normed, normed, n_heads, true,
                          cache ? &cache->self_attn : nullptr);
  dropout_forward(s, drop, cache ? &cache->drop_self : nullptr);
  Mat<S> y1 = y + s;

  Mat<S> normed2 =
      ln_forward(p.ln_cross, y1, cache ? &cache->ln_cross : nullptr);
  Mat<S> c = attn_forward(p.cross_attn, normed2, memory, n_heads, false,
                          cache ? &cache->cross_attn : nullptr);
  dropout_forward(c, drop, cache ? &cache->drop_cross : nullptr);
  Mat<S> y2 = y1 + c;

  Mat<S> normed3 = ln_forward(p.ln_ffn, y2, cache ? &cache->ln_ffn : nullptr);
  Mat<S> f = ffn_forward(p.ffn, normed3, cache ? &cache->ffn : nullptr);
  dropout_forward(f, drop, cache ? &cache->drop_ffn : nullptr);
  return y2 + f;
}

// d_memory accumulates the gradient flowing into the encoder output through
// cross attention.
template <typename S>
Mat<S> decoder_layer_backward(const DecoderLayerParams<S>& p,
                              DecoderLayerParams<S>& grad,
                              const DecoderLayerCache<S>& cache, int n_heads,
                              const Mat<S>& d_out, Mat<S>& d_memory) {
  Mat<S> df = d_out;
  dropout_backward(df, cache.drop_ffn);
  Mat<S> dnormed3 = ffn_backward(p.ffn, grad.ffn, cache.ffn, df);
  Mat<S> dy2 = d_out + ln_backward(p.ln_ffn, grad.ln_ffn, cache.ln_ffn, dnormed3);

  Mat<S> dc = dy2;
  dropout_backward(dc, cache.drop_cross);
  Mat<S> dq_in, dkv_in;
  attn_backward(p.cross_attn, grad.cross_attn, cache.cross_attn, dc, n_heads,
                dq_in, dkv_in);
  d_memory += dkv_in;
  Mat<S> dy1 = dy2 + ln_backward(p.ln_cross, grad.ln_cross, cache.ln_cross, dq_in);

  Mat<S> ds = dy1;
  dropout_backward(ds, cache.drop_self);
  Mat<S> dq_self, dkv_self;
  attn_backward(p.self_attn, grad.self_attn, cache.self_attn, ds, n_heads,
                dq_self, dkv_self);
  Mat<S> dnormed = dq_self + dkv_self;
  return dy1 + ln_backward(p.ln_self, grad.ln_self, cache.ln_self, dnormed);
}

template <typename S>
struct DecoderStackCache {
  std::vector<int> ids;
  DropoutCache<S> drop_embed;
  std::vector<DecoderLayerCache<S>> layers;
  LayerNormCache<S> final_norm;
  Mat<S> final_out;  // post final norm, input to the tied output projection
};

// ---------------------------------------------------------------------------
// Embedding

// Rows of the shared embedding table scaled by sqrt(d_model), plus the fixed
// sinusoidal signal.
template <typename S>
Mat<S> embed_sequence(const Mat<S>& embedding, const std::vector<int>& ids,
                      int d_model) {
  const S scale = std::sqrt(S(d_model));
  Mat<S> x = positional_signal<S>(static_cast<int>(ids.size()), d_model);
  for (size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || ids[t] >= embedding.rows())
      throw std::out_of_range("token id outside embedding table");
    x.row(static_cast<Eigen::Index>(t)) +=
        scale * embedding.row(ids[t]);
  }
  return x;
}

template <typename S>
void embed_backward(Mat<S>& embedding_grad, const std::vector<int>& ids,
                    int d_model, const Mat<S>& dx) {
  const S scale = std::sqrt(S(d_model));
  for (size_t t = 0; t < ids.size(); ++t)
    embedding_grad.row(ids[t]) +=
        scale * dx.row(static_cast<Eigen::Index>(t));
}

// ---------------------------------------------------------------------------
// Full encoder / decoder passes

template <typename S>
Mat<S> run_encoder_stack(const Mat<S>& embedding, const EncoderStack<S>& stack,
                         const std::vector<int>& ids, int d_model, int n_heads,
                         const DropoutState<S>& drop,
                         EncoderStackCache<S>* cache) {
  Mat<S> x = embed_sequence(embedding, ids, d_model);
  if (cache) {
    cache->ids = ids;
    cache->layers.resize(stack.layers.size());
  }
  dropout_forward(x, drop, cache ? &cache->drop_embed : nullptr);
  for (size_t l = 0; l < stack.layers.size(); ++l)
    x = encoder_layer_forward(stack.layers[l], x, n_heads, drop,
                              cache ? &cache->layers[l] : nullptr);
  return ln_forward(stack.final_norm, x, cache ? &cache->final_norm : nullptr);
}

template <typename S>
void run_encoder_stack_backward(Mat<S>& embedding_grad,
                                const EncoderStack<S>& stack,
                                EncoderStack<S>& grad,
                                const EncoderStackCache<S>& cache, int d_model,
                                int n_heads, const Mat<S>& d_out) {
  Mat<S> dx =
      ln_backward(stack.final_norm, grad.final_norm, cache.final_norm, d_out);
  for (size_t l = stack.layers.size(); l-- > 0;)
    dx = encoder_layer_backward(stack.layers[l], grad.layers[l],
                                cache.layers[l], n_heads, dx);
  dropout_backward(dx, cache.drop_embed);
  embed_backward(embedding_grad, cache.ids, d_model, dx);
}

template <typename S>
Mat<S> run_decoder_stack(const Mat<S>& embedding, const DecoderStack<S>& stack,
                         const std::vector<int>& ids, const Mat<S>& memory,
                         int d_model, int n_heads, const DropoutState<S>& drop,
                         DecoderStackCache<S>* cache) {
  Mat<S> y = embed_sequence(embedding, ids, d_model);
  if (cache) {
    cache->ids = ids;
    cache->layers.resize(stack.layers.size());
  }
  dropout_forward(y, drop, cache ? &cache->drop_embed : nullptr);
  for (size_t l = 0; l < stack.layers.size(); ++l)
    y = decoder_layer_forward(stack.layers[l], y, memory, n_heads, drop,
                              cache ? &cache->layers[l] : nullptr);
  Mat<S> out =
      ln_forward(stack.final_norm, y, cache ? &cache->final_norm : nullptr);
  if (cache) cache->final_out = out;
  return out;
}

// Returns the gradient w.r.t. the encoder memory.
template <typename S>
Mat<S> run_decoder_stack_backward(Mat<S>& embedding_grad,
                                  const DecoderStack<S>& stack,
                                  DecoderStack<S>& grad,
                                  const DecoderStackCache<S>& cache,
                                  Eigen::Index memory_rows, int d_model,
                                  int n_heads, const Mat<S>& d_out) {
  Mat<S> d_memory = Mat<S>::Zero(memory_rows, d_model);
  Mat<S> dy =
      ln_backward(stack.final_norm, grad.final_norm, cache.final_norm, d_out);
  for (size_t l = stack.layers.size(); l-- > 0;)
    dy = decoder_layer_backward(stack.layers[l], grad.layers[l],
                                cache.layers[l], n_heads, dy, d_memory);
  dropout_backward(dy, cache.drop_embed);
  embed_backward(embedding_grad, cache.ids, d_model, dy);
  return d_memory;
}

// ---------------------------------------------------------------------------
// Generator-level API

template <typename S>
Mat<S> encode(const GeneratorParams<S>& params, const std::vector<int>& src,
              EncoderStackCache<S>* cache = nullptr,
              const DropoutState<S>& drop = {}) {
  if (src.empty()) throw std::invalid_argument("encode: empty source");
  if (src.size() > static_cast<size_t>(params.config.max_src_len))
    throw std::invalid_argument("encode: source exceeds max_src_len");
  return run_encoder_stack(params.weights.embedding, params.weights.encoder,
                           src, params.config.d_model, params.config.n_heads,
                           drop, cache);
}

// Teacher-forced logits for every position of the decoder input.  Output
// projection is the transposed embedding (weights are tied).
template <typename S>
Mat<S> decoder_logits(const GeneratorParams<S>& params,
                      const std::vector<int>& dec_in, const Mat<S>& memory,
                      DecoderStackCache<S>* cache = nullptr,
                      const DropoutState<S>& drop = {}) {
  if (dec_in.empty()) throw std::invalid_argument("decoder input is empty");
  if (dec_in.size() > static_cast<size_t>(params.config.max_tgt_len))
    throw std::invalid_argument("decoder input exceeds max_tgt_len");
  Mat<S> out = run_decoder_stack(params.weights.embedding,
                                 params.weights.decoder, dec_in, memory,
                                 params.config.d_model, params.config.n_heads,
                                 drop, cache);
  return out * params.weights.embedding.transpose();
}

// Next-token logits after the given non-empty prefix.  Recomputes the whole
// prefix each call; incremental decoding therefore matches the batched
// teacher-forced pass exactly.
template <typename S>
Mat<S> decode_step(const GeneratorParams<S>& params, const Mat<S>& memory,
                   const std::vector<int>& prefix) {
  Mat<S> logits = decoder_logits(params, prefix, memory);
  return logits.row(logits.rows() - 1);
}

struct SequencePair {
  std::vector<int> src;
  std::vector<int> tgt;  // without BOS/EOS; both are added internally
};

inline std::vector<int> decoder_input(const std::vector<int>& tgt) {
  std::vector<int> in;
  in.reserve(tgt.size() + 1);
  in.push_back(kBosId);
  in.insert(in.end(), tgt.begin(), tgt.end());
  return in;
}

inline std::vector<int> decoder_target(const std::vector<int>& tgt) {
  std::vector<int> out = tgt;
  out.push_back(kEosId);
  return out;
}

// Mean token-level cross entropy for one example: positions are averaged so
// long answers do not dominate, matching the corpus loss definition.
template <typename S>
S sequence_nll(const Mat<S>& logits, const std::vector<int>& targets) {
  S total = S(0);
  for (size_t t = 0; t < targets.size(); ++t)
    total -= log_softmax_at(logits.row(static_cast<Eigen::Index>(t)),
                            targets[t]);
  return total / S(targets.size());
}

template <typename S>
S generation_loss(const GeneratorParams<S>& params, const std::vector<int>& src,
                  const std::vector<int>& tgt) {
  Mat<S> memory = encode(params, src);
  Mat<S> logits = decoder_logits(params, decoder_input(tgt), memory);
  return sequence_nll(logits, decoder_target(tgt));
}

// Forward + backward for one example.  The example's gradient contribution is
// scaled by `weight` (1/batch_size for mean-of-examples batching).
template <typename S>
S example_loss_and_grad(const GeneratorParams<S>& params,
                        const std::vector<int>& src,
                        const std::vector<int>& tgt,
                        TransformerWeights<S>& grad, S weight,
                        const DropoutState<S>& drop = {}) {
  EncoderStackCache<S> enc_cache;
  DecoderStackCache<S> dec_cache;
  Mat<S> memory = encode(params, src, &enc_cache, drop);
  const std::vector<int> dec_in = decoder_input(tgt);
  const std::vector<int> dec_out = decoder_target(tgt);
  Mat<S> logits =
      decoder_logits(params, dec_in, memory, &dec_cache, drop);

  const Eigen::Index t_len = logits.rows();
  const S pos_weight = weight / S(t_len);
  S loss = S(0);
  Mat<S> dlogits(t_len, logits.cols());
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const auto row = logits.row(t);
    const S m = row.maxCoeff();
    Mat<S> probs = (row.array() - m).exp().matrix();
    const S z = probs.sum();
    probs /= z;
    loss -= std::log(probs(dec_out[static_cast<size_t>(t)]));
    probs(dec_out[static_cast<size_t>(t)]) -= S(1);
    dlogits.row(t) = pos_weight * probs;
  }
  loss /= S(t_len);

  // Tied projection: logits = Y E^T.
  grad.embedding += dlogits.transpose() * dec_cache.final_out;
  Mat<S> d_final = dlogits * params.weights.embedding;

  Mat<S> d_memory = run_decoder_stack_backward(
      grad.embedding, params.weights.decoder, grad.decoder, dec_cache,
      memory.rows(), params.config.d_model, params.config.n_heads, d_final);
  run_encoder_stack_backward(grad.embedding, params.weights.encoder,
                             grad.encoder, enc_cache, params.config.d_model,
                             params.config.n_heads, d_memory);
  return loss;
}

// Mean example loss over a batch; gradients for the same mean accumulate into
// `grad` (caller zeroes it).
template <typename S>
S batch_loss_and_grad(const GeneratorParams<S>& params,
                      const std::vector<SequencePair>& batch,
                      TransformerWeights<S>& grad,
                      const DropoutState<S>& drop = {}) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const S weight = S(1) / S(batch.size());
  S total = S(0);
  for (const SequencePair& ex : batch)
    total += example_loss_and_grad(params, ex.src, ex.tgt, grad, weight, drop);
  return total / S(batch.size());
}

// Fraction of teacher-forced positions where argmax(logits) equals the target.
template <typename S>
double teacher_forced_accuracy(const GeneratorParams<S>& params,
                               const std::vector<SequencePair>& examples) {
  size_t hits = 0, total = 0;
  for (const SequencePair& ex : examples) {
    Mat<S> memory = encode(params, ex.src);
    Mat<S> logits = decoder_logits(params, decoder_input(ex.tgt), memory);
    const std::vector<int> targets = decoder_target(ex.tgt);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      Eigen::Index best;
      logits.row(t).maxCoeff(&best);
      hits += (static_cast<int>(best) == targets[static_cast<size_t>(t)]);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace msqa::minigen
