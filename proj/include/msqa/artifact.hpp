#pragma once

// Versioned on-disk format for trained models.  One JSON document holds the
// architecture config, the vocabulary, and every tensor (row-major float64,
// base64).  A checksum over all scalars in visit order is stored and
// re-verified on load, and the vocabulary hash lets the pipeline refuse to
// combine models built from different vocabularies.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msqa/corpus.hpp"
#include "msqa/minigen.hpp"
#include "msqa/relevancy.hpp"

namespace msqa {

inline constexpr int kArtifactVersion = 1;
inline constexpr const char* kArtifactFormat = "msqa-artifact";

namespace detail {

inline const char* kBase64Chars =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(const std::vector<unsigned char>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out.push_back(kBase64Chars[(v >> 18) & 63]);
    out.push_back(kBase64Chars[(v >> 12) & 63]);
    out.push_back(kBase64Chars[(v >> 6) & 63]);
    out.push_back(kBase64Chars[v & 63]);
  }
  const size_t rest = bytes.size() - i;
  if (rest == 1) {
    const unsigned v = bytes[i] << 16;
    out.push_back(kBase64Chars[(v >> 18) & 63]);
    out.push_back(kBase64Chars[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out.push_back(kBase64Chars[(v >> 18) & 63]);
    out.push_back(kBase64Chars[(v >> 12) & 63]);
    out.push_back(kBase64Chars[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0)
    throw std::invalid_argument("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        vals[j] = 0;
        ++pad;
      } else {
        vals[j] = value_of(c);
        if (vals[j] < 0 || pad > 0)
          throw std::invalid_argument("base64: invalid character");
      }
    }
    const unsigned v = (static_cast<unsigned>(vals[0]) << 18) |
                       (static_cast<unsigned>(vals[1]) << 12) |
                       (static_cast<unsigned>(vals[2]) << 6) |
                       static_cast<unsigned>(vals[3]);
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

// Scalars are widened to double and stored row-major.  Byte order is the
// host's (the toolchain this ships with is little-endian only).
template <typename S>
nlohmann::json tensor_to_json(const std::string& name,
                              const minigen::Mat<S>& t) {
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<size_t>(t.size()) * sizeof(double));
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      const double v = static_cast<double>(t(r, c));
      unsigned char buf[sizeof(double)];
      std::memcpy(buf, &v, sizeof(double));
      bytes.insert(bytes.end(), buf, buf + sizeof(double));
    }
  return nlohmann::json{{"name", name},
                        {"rows", t.rows()},
                        {"cols", t.cols()},
                        {"data", base64_encode(bytes)}};
}

template <typename S>
void tensor_from_json(const nlohmann::json& j, const std::string& name,
                      minigen::Mat<S>& t) {
  if (j.at("rows").get<Eigen::Index>() != t.rows() ||
      j.at("cols").get<Eigen::Index>() != t.cols())
    throw std::runtime_error("artifact: tensor " + name + " has shape " +
                             j.at("rows").dump() + "x" + j.at("cols").dump() +
                             ", expected " + std::to_string(t.rows()) + "x" +
                             std::to_string(t.cols()));
  const std::vector<unsigned char> bytes =
      base64_decode(j.at("data").get<std::string>());
  if (bytes.size() != static_cast<size_t>(t.size()) * sizeof(double))
    throw std::runtime_error("artifact: tensor " + name +
                             " has wrong payload size");
  size_t off = 0;
  for (Eigen::Index r = 0; r < t.rows(); ++r)
    for (Eigen::Index c = 0; c < t.cols(); ++c) {
      double v;
      std::memcpy(&v, bytes.data() + off, sizeof(double));
      off += sizeof(double);
      t(r, c) = static_cast<S>(v);
    }
}

template <typename Pack>
nlohmann::json tensors_to_json(Pack& pack) {
  nlohmann::json arr = nlohmann::json::array();
  pack.visit([&arr](const std::string& name, auto& t) {
    arr.push_back(tensor_to_json(name, t));
  });
  return arr;
}

// Fills an already-shaped pack from the tensor array, by name, requiring an
// exact one-to-one match.
template <typename Pack>
void tensors_from_json(const nlohmann::json& arr, Pack& pack) {
  std::vector<const nlohmann::json*> by_order;
  for (const auto& t : arr) by_order.push_back(&t);
  size_t next = 0;
  size_t expected = 0;
  pack.visit([&](const std::string&, auto&) { ++expected; });
  if (by_order.size() != expected)
    throw std::runtime_error("artifact: expected " + std::to_string(expected) +
                             " tensors, found " +
                             std::to_string(by_order.size()));
  pack.visit([&](const std::string& name, auto& t) {
    const nlohmann::json& j = *by_order[next++];
    if (j.at("name").get<std::string>() != name)
      throw std::runtime_error("artifact: tensor order mismatch, expected " +
                               name + ", found " +
                               j.at("name").get<std::string>());
    tensor_from_json(j, name, t);
  });
}

inline nlohmann::json vocab_to_json(const Vocabulary& vocab) {
  return nlohmann::json(vocab.tokens());
}

inline Vocabulary vocab_from_json(const nlohmann::json& j) {
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < static_cast<size_t>(Vocabulary::kNumSpecials))
    throw std::runtime_error("artifact: vocabulary is missing reserved tokens");
  for (int i = 0; i < Vocabulary::kNumSpecials; ++i)
    if (tokens[static_cast<size_t>(i)] != kSpecialTokens[static_cast<size_t>(i)])
      throw std::runtime_error(
          "artifact: reserved token mismatch at id " + std::to_string(i));
  Vocabulary vocab;
  for (size_t i = static_cast<size_t>(Vocabulary::kNumSpecials);
       i < tokens.size(); ++i)
    vocab.add(tokens[i]);
  if (vocab.size() != static_cast<int>(tokens.size()))
    throw std::runtime_error("artifact: duplicate token in vocabulary");
  return vocab;
}

inline nlohmann::json load_artifact_json(const std::string& path,
                                         const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open artifact: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error("artifact is not valid JSON: " + path);
  if (j.value("format", "") != kArtifactFormat)
    throw std::runtime_error("not a model artifact: " + path);
  if (j.value("version", -1) != kArtifactVersion)
    throw std::runtime_error("unsupported artifact version in " + path +
                             " (expected " + std::to_string(kArtifactVersion) +
                             ")");
  if (j.value("kind", "") != expected_kind)
    throw std::runtime_error("artifact " + path + " has kind '" +
                             j.value("kind", "") + "', expected '" +
                             expected_kind + "'");
  return j;
}

inline void write_artifact_json(const nlohmann::json& j,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write artifact: " + path);
  out << j.dump(1) << '\n';
  if (!out) throw std::runtime_error("failed writing artifact: " + path);
}

}  // namespace detail

// Peek at an artifact's kind without loading tensors.
inline std::string artifact_kind(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open artifact: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != kArtifactFormat)
    throw std::runtime_error("not a model artifact: " + path);
  return j.value("kind", "");
}

// Extract just the vocabulary, regardless of artifact kind; used to train one
// model on the vocabulary of another so the two can be combined later.
inline Vocabulary load_artifact_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open artifact: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded() || j.value("format", "") != kArtifactFormat ||
      !j.contains("vocab"))
    throw std::runtime_error("not a model artifact: " + path);
  return detail::vocab_from_json(j.at("vocab"));
}

// ---------------------------------------------------------------------------
// Generator artifacts

inline nlohmann::json generator_config_to_json(const minigen::GeneratorConfig& c) {
  return nlohmann::json{
      {"d_model", c.d_model},       {"n_heads", c.n_heads},
      {"encoder_layers", c.encoder_layers},
      {"decoder_layers", c.decoder_layers},
      {"ffn_dim", c.ffn_dim},       {"max_src_len", c.max_src_len},
      {"max_tgt_len", c.max_tgt_len},
      {"dropout", c.dropout},       {"seed", c.seed}};
}

inline minigen::GeneratorConfig generator_config_from_json(
    const nlohmann::json& j) {
  minigen::GeneratorConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.decoder_layers = j.at("decoder_layers").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_src_len = j.at("max_src_len").get<int>();
  c.max_tgt_len = j.at("max_tgt_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

template <typename S>
void save_generator(minigen::GeneratorParams<S>& params,
                    const std::string& path) {
  nlohmann::json j;
  j["format"] = kArtifactFormat;
  j["version"] = kArtifactVersion;
  j["kind"] = "generator";
  j["config"] = generator_config_to_json(params.config);
  j["vocab"] = detail::vocab_to_json(params.vocab);
  j["vocab_hash"] = std::to_string(params.vocab.hash());
  j["checksum"] = std::to_string(minigen::parameter_checksum(params));
  j["tensors"] = detail::tensors_to_json(params);
  detail::write_artifact_json(j, path);
}

template <typename S>
minigen::GeneratorParams<S> load_generator(const std::string& path) {
  const nlohmann::json j = detail::load_artifact_json(path, "generator");
  minigen::GeneratorParams<S> params;
  params.config = generator_config_from_json(j.at("config"));
  params.vocab = detail::vocab_from_json(j.at("vocab"));
  if (j.value("vocab_hash", "") != std::to_string(params.vocab.hash()))
    throw std::runtime_error("artifact " + path + ": vocabulary hash mismatch");

  params.weights.embedding.resize(params.vocab.size(), params.config.d_model);
  params.weights.encoder.shape(params.config.encoder_layers,
                               params.config.d_model, params.config.ffn_dim);
  params.weights.decoder.shape(params.config.decoder_layers,
                               params.config.d_model, params.config.ffn_dim);
  detail::tensors_from_json(j.at("tensors"), params);
  if (j.value("checksum", "") !=
      std::to_string(minigen::parameter_checksum(params)))
    throw std::runtime_error("artifact " + path + ": checksum mismatch");
  return params;
}

// ---------------------------------------------------------------------------
// Relevancy artifacts

inline nlohmann::json relevancy_config_to_json(const RelevancyConfig& c) {
  return nlohmann::json{{"d_model", c.d_model},
                        {"n_heads", c.n_heads},
                        {"layers", c.layers},
                        {"ffn_dim", c.ffn_dim},
                        {"max_seq_len", c.max_seq_len},
                        {"dropout", c.dropout},
                        {"seed", c.seed},
                        {"variant", to_string(c.variant)}};
}

inline RelevancyConfig relevancy_config_from_json(const nlohmann::json& j) {
  RelevancyConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.variant = pair_variant_from_string(j.at("variant").get<std::string>());
  c.validate();
  return c;
}

template <typename S>
void save_relevancy(RelevancyModel<S>& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = kArtifactFormat;
  j["version"] = kArtifactVersion;
  j["kind"] = "relevancy";
  j["config"] = relevancy_config_to_json(model.config);
  j["vocab"] = detail::vocab_to_json(model.vocab);
  j["vocab_hash"] = std::to_string(model.vocab.hash());
  j["checksum"] = std::to_string(minigen::parameter_checksum(model));
  j["tensors"] = detail::tensors_to_json(model);
  detail::write_artifact_json(j, path);
}

template <typename S>
RelevancyModel<S> load_relevancy(const std::string& path) {
  const nlohmann::json j = detail::load_artifact_json(path, "relevancy");
  RelevancyModel<S> model;
  model.config = relevancy_config_from_json(j.at("config"));
  model.vocab = detail::vocab_from_json(j.at("vocab"));
  if (j.value("vocab_hash", "") != std::to_string(model.vocab.hash()))
    throw std::runtime_error("artifact " + path + ": vocabulary hash mismatch");

  model.weights.embedding.resize(model.vocab.size(), model.config.d_model);
  model.weights.encoder.shape(model.config.layers, model.config.d_model,
                              model.config.ffn_dim);
  model.weights.cls_w.resize(model.config.d_model, 2);
  model.weights.cls_b.resize(1, 2);
  detail::tensors_from_json(j.at("tensors"), model);
  if (j.value("checksum", "") !=
      std::to_string(minigen::parameter_checksum(model)))
    throw std::runtime_error("artifact " + path + ": checksum mismatch");
  return model;
}

}  // namespace msqa
