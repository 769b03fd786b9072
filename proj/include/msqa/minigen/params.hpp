#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "msqa/corpus.hpp"
#include "msqa/minigen/core.hpp"

// Parameter containers for the encoder-decoder transformer. The token
// embedding matrix is shared between the encoder input, the decoder input and
// the output projection. All tensors are reachable through visit_tensors,
// which the optimizer, serializer, checksummer and gradient checker rely on;
// the visit order is part of the artifact format.

namespace msqa::minigen {

struct GeneratorConfig {
  int d_model = 64;
  int n_heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ffn_dim = 256;
  int max_src_len = 256;
  int max_tgt_len = 48;
  double dropout = 0.0;
  std::uint64_t seed = 42;

  void validate() const {
    if (d_model < 1 || n_heads < 1 || encoder_layers < 1 ||
        decoder_layers < 1 || ffn_dim < 1 || max_src_len < 1 ||
        max_tgt_len < 1)
      throw std::invalid_argument("GeneratorConfig: all dims must be >= 1");
    if (d_model % n_heads != 0)
      throw std::invalid_argument(
          "GeneratorConfig: d_model must be divisible by n_heads");
    if (dropout < 0.0 || dropout >= 1.0)
      throw std::invalid_argument("GeneratorConfig: dropout must be in [0,1)");
  }
};

template <typename S>
struct LayerNormParams {
  Mat<S> gain;  // 1 x d
  Mat<S> bias;  // 1 x d

  void init(int d) {
    gain = Mat<S>::Ones(1, d);
    bias = Mat<S>::Zero(1, d);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

template <typename S>
struct AttentionParams {
  Mat<S> wq, wk, wv, wo;  // d x d
  Mat<S> bq, bk, bv, bo;  // 1 x d

  void init(int d, std::mt19937_64& rng, double stddev) {
    for (Mat<S>* w : {&wq, &wk, &wv, &wo}) {
      w->resize(d, d);
      fill_normal(*w, rng, stddev);
    }
    for (Mat<S>* b : {&bq, &bk, &bv, &bo}) *b = Mat<S>::Zero(1, d);
  }
  void shape(int d) {
    for (Mat<S>* w : {&wq, &wk, &wv, &wo}) w->resize(d, d);
    for (Mat<S>* b : {&bq, &bk, &bv, &bo}) b->resize(1, d);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".wo", wo);
    f(prefix + ".bq", bq);
    f(prefix + ".bk", bk);
    f(prefix + ".bv", bv);
    f(prefix + ".bo", bo);
  }
};

template <typename S>
struct FfnParams {
  Mat<S> w1;  // d x ffn
  Mat<S> b1;  // 1 x ffn
  Mat<S> w2;  // ffn x d
  Mat<S> b2;  // 1 x d

  void init(int d, int ffn, std::mt19937_64& rng, double stddev) {
    w1.resize(d, ffn);
    fill_normal(w1, rng, stddev);
    b1 = Mat<S>::Zero(1, ffn);
    w2.resize(ffn, d);
    fill_normal(w2, rng, stddev);
    b2 = Mat<S>::Zero(1, d);
  }
  void shape(int d, int ffn) {
    w1.resize(d, ffn);
    b1.resize(1, ffn);
    w2.resize(ffn, d);
    b2.resize(1, d);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
  }
};

template <typename S>
struct EncoderLayerParams {
  LayerNormParams<S> ln_attn, ln_ffn;
  AttentionParams<S> attn;
  FfnParams<S> ffn;

  void init(int d, int ffn_dim, std::mt19937_64& rng, double stddev) {
    ln_attn.init(d);
    ln_ffn.init(d);
    attn.init(d, rng, stddev);
    ffn.init(d, ffn_dim, rng, stddev);
  }
  void shape(int d, int ffn_dim) {
    ln_attn.init(d);
    ln_ffn.init(d);
    attn.shape(d);
    ffn.shape(d, ffn_dim);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln_attn.visit(prefix + ".ln_attn", f);
    attn.visit(prefix + ".attn", f);
    ln_ffn.visit(prefix + ".ln_ffn", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

template <typename S>
struct DecoderLayerParams {
  LayerNormParams<S> ln_self, ln_cross, ln_ffn;
  AttentionParams<S> self_attn, cross_attn;
  FfnParams<S> ffn;

  void init(int d, int ffn_dim, std::mt19937_64& rng, double stddev) {
    ln_self.init(d);
    ln_cross.init(d);
    ln_ffn.init(d);
    self_attn.init(d, rng, stddev);
    cross_attn.init(d, rng, stddev);
    ffn.init(d, ffn_dim, rng, stddev);
  }
  void shape(int d, int ffn_dim) {
    ln_self.init(d);
    ln_cross.init(d);
    ln_ffn.init(d);
    self_attn.shape(d);
    cross_attn.shape(d);
    ffn.shape(d, ffn_dim);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln_self.visit(prefix + ".ln_self", f);
    self_attn.visit(prefix + ".self_attn", f);
    ln_cross.visit(prefix + ".ln_cross", f);
    cross_attn.visit(prefix + ".cross_attn", f);
    ln_ffn.visit(prefix + ".ln_ffn", f);
    ffn.visit(prefix + ".ffn", f);
  }
};

// Encoder stack weights without the embedding; shared between the generator
// and the relevancy classifier.
template <typename S>
struct EncoderStack {
  std::vector<EncoderLayerParams<S>> layers;
  LayerNormParams<S> final_norm;

  void init(int n_layers, int d, int ffn_dim, std::mt19937_64& rng,
            double stddev) {
    layers.resize(n_layers);
    for (auto& l : layers) l.init(d, ffn_dim, rng, stddev);
    final_norm.init(d);
  }
  void shape(int n_layers, int d, int ffn_dim) {
    layers.resize(n_layers);
    for (auto& l : layers) l.shape(d, ffn_dim);
    final_norm.init(d);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + "." + std::to_string(i), f);
    final_norm.visit(prefix + ".final_norm", f);
  }
};

template <typename S>
struct DecoderStack {
  std::vector<DecoderLayerParams<S>> layers;
  LayerNormParams<S> final_norm;

  void init(int n_layers, int d, int ffn_dim, std::mt19937_64& rng,
            double stddev) {
    layers.resize(n_layers);
    for (auto& l : layers) l.init(d, ffn_dim, rng, stddev);
    final_norm.init(d);
  }
  void shape(int n_layers, int d, int ffn_dim) {
    layers.resize(n_layers);
    for (auto& l : layers) l.shape(d, ffn_dim);
    final_norm.init(d);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + "." + std::to_string(i), f);
    final_norm.visit(prefix + ".final_norm", f);
  }
};

template <typename S>
struct TransformerWeights {
  using Scalar = S;

  Mat<S> embedding;  // vocab x d; also the output projection (transposed)
  EncoderStack<S> encoder;
  DecoderStack<S> decoder;

  template <typename F>
  void visit(F&& f) {
    f(std::string("embedding"), embedding);
    encoder.visit("encoder", f);
    decoder.visit("decoder", f);
  }
};

// Full generator state: architecture, vocabulary and weights.
template <typename S>
struct GeneratorParams {
  using Scalar = S;

  GeneratorConfig config;
  Vocabulary vocab;
  TransformerWeights<S> weights;

  template <typename F>
  void visit(F&& f) {
    weights.visit(f);
  }
};

inline constexpr double kInitStddev = 0.02;

template <typename S>
GeneratorParams<S> init_generator(const GeneratorConfig& config,
                                  Vocabulary vocab) {
  config.validate();
  GeneratorParams<S> p;
  p.config = config;
  p.vocab = std::move(vocab);
  auto rng = make_rng(config.seed);
  p.weights.embedding.resize(p.vocab.size(), config.d_model);
  fill_normal(p.weights.embedding, rng, kInitStddev);
  p.weights.encoder.init(config.encoder_layers, config.d_model, config.ffn_dim,
                         rng, kInitStddev);
  p.weights.decoder.init(config.decoder_layers, config.d_model, config.ffn_dim,
                         rng, kInitStddev);
  return p;
}

// ---------------------------------------------------------------------------
// Whole-model tensor utilities (used for grads, optimizer state, checksums)

template <typename P>
P zeros_like(P params) {  // works on any visit()-able parameter pack
  params.visit([](const std::string&, auto& t) { t.setZero(); });
  return params;
}

template <typename P>
std::size_t parameter_count(P& params) {
  std::size_t n = 0;
  params.visit([&n](const std::string&, auto& t) {
    n += static_cast<std::size_t>(t.size());
  });
  return n;
}

template <typename P>
double squared_norm(P& params) {
  double sq = 0;
  params.visit([&sq](const std::string&, auto& t) {
    sq += static_cast<double>(t.template cast<double>().squaredNorm());
  });
  return sq;
}

// FNV-1a over every tensor's scalars (widened to double) in visit order.
template <typename P>
std::uint64_t parameter_checksum(P& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_byte = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  params.visit([&](const std::string&, auto& t) {
    for (Eigen::Index j = 0; j < t.cols(); ++j)
      for (Eigen::Index i = 0; i < t.rows(); ++i) {
        const double v = static_cast<double>(t(i, j));
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) mix_byte(b);
      }
  });
  return h;
}

// Flat indexing across all tensors in visit order; used by the finite
// difference gradient checker.
template <typename P>
double get_flat(P& params, std::size_t flat_index) {
  double out = 0;
  std::size_t seen = 0;
  params.visit([&](const std::string&, auto& t) {
    const auto n = static_cast<std::size_t>(t.size());
    if (flat_index >= seen && flat_index < seen + n)
      out = static_cast<double>(t.data()[flat_index - seen]);
    seen += n;
  });
  return out;
}

template <typename P>
void add_flat(P& params, std::size_t flat_index, double delta) {
  std::size_t seen = 0;
  params.visit([&](const std::string&, auto& t) {
    const auto n = static_cast<std::size_t>(t.size());
    if (flat_index >= seen && flat_index < seen + n) {
      using TS = typename std::decay_t<decltype(t)>::Scalar;
      t.data()[flat_index - seen] += static_cast<TS>(delta);
    }
    seen += n;
  });
}

}  // namespace msqa::minigen
