#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "proxylab/embedder.hpp"
#include "proxylab/errors.hpp"
#include "proxylab/hexfloat.hpp"
#include "proxylab/matrix.hpp"

namespace proxylab {

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kEmbeddingFileVersion = 1;

// ---------------------------------------------------------------------------
// Matrix <-> JSON ({"rows", "cols", "data": [hex strings]})

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  auto& data = j["data"] = nlohmann::json::array();
  for (double v : m.data()) data.push_back(format_hex(v));
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& name) {
  try {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    const auto& data = j.at("data");
    if (!data.is_array() || data.size() != rows * cols) {
      throw ParseError("block '" + name + "' holds " + std::to_string(data.size()) +
                           " values, expected " + std::to_string(rows * cols),
                       1, 0);
    }
    std::vector<double> values;
    values.reserve(data.size());
    for (const auto& t : data) {
      auto v = parse_double(t.get<std::string>());
      if (!v) throw ParseError("block '" + name + "' has a bad number " + t.dump(), 1, 0);
      values.push_back(*v);
    }
    return Matrix(rows, cols, std::move(values));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("block '" + name + "': " + e.what(), 1, 0);
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    // byte is 1-based in nlohmann; count the line ourselves
    const std::string text = ss.str();
    const std::size_t byte = e.byte > 0 ? e.byte - 1 : 0;
    std::size_t line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ParseError("malformed JSON in '" + path.string() + "'", line, byte);
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw FileError("write to '" + path.string() + "' failed");
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  EmbedderParams params;
  ProxyBank bank;
  std::uint64_t seed = 0;
  nlohmann::json config;  // resolved run configuration

  bool operator==(const Checkpoint& o) const {
    return params.embed_weights == o.params.embed_weights &&
           params.embed_bias == o.params.embed_bias && params.pool_k == o.params.pool_k &&
           params.use_layer_norm == o.params.use_layer_norm &&
           params.ln_epsilon == o.params.ln_epsilon && bank.proxies == o.bank.proxies &&
           bank.class_ids == o.bank.class_ids && seed == o.seed && config == o.config;
  }
};

inline std::string checkpoint_to_string(const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = "proxylab-checkpoint";
  j["version"] = kCheckpointVersion;
  j["seed"] = ck.seed;
  j["pool_k"] = ck.params.pool_k;
  j["use_layer_norm"] = ck.params.use_layer_norm;
  j["ln_epsilon"] = format_hex(ck.params.ln_epsilon);
  j["embed_weights"] = matrix_to_json(ck.params.embed_weights);
  j["embed_bias"] = matrix_to_json(ck.params.embed_bias);
  j["proxies"] = matrix_to_json(ck.bank.proxies);
  j["class_ids"] = ck.bank.class_ids;
  j["config"] = ck.config;
  return j.dump(1) + "\n";
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_string(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  Checkpoint ck;
  try {
    if (j.at("format").get<std::string>() != "proxylab-checkpoint")
      throw ParseError("'" + path.string() + "' is not a checkpoint", 1, 0);
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ParseError("unknown checkpoint version " + j.at("version").dump(), 1, 0);
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.params.pool_k = j.at("pool_k").get<std::size_t>();
    ck.params.use_layer_norm = j.at("use_layer_norm").get<bool>();
    auto eps = parse_double(j.at("ln_epsilon").get<std::string>());
    if (!eps) throw ParseError("bad ln_epsilon", 1, 0);
    ck.params.ln_epsilon = *eps;
    ck.bank.class_ids = j.at("class_ids").get<std::vector<int>>();
    ck.config = j.value("config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint field: ") + e.what(), 1, 0);
  }
  ck.params.embed_weights = matrix_from_json(j.at("embed_weights"), "embed_weights");
  ck.params.embed_bias = matrix_from_json(j.at("embed_bias"), "embed_bias");
  ck.bank.proxies = matrix_from_json(j.at("proxies"), "proxies");
  const auto& p = ck.params;
  if (p.embed_bias.rows() != 1 || p.embed_bias.cols() != p.embed_weights.cols())
    throw ShapeError("checkpoint: embed_bias " + p.embed_bias.shape_string() +
                     " does not match embed_weights " + p.embed_weights.shape_string());
  if (ck.bank.proxies.rows() != ck.bank.class_ids.size() ||
      ck.bank.proxies.cols() != p.embed_weights.cols())
    throw ShapeError("checkpoint: proxies " + ck.bank.proxies.shape_string() + " for " +
                     std::to_string(ck.bank.class_ids.size()) + " classes, emb_dim " +
                     std::to_string(p.embed_weights.cols()));
  return ck;
}

// ---------------------------------------------------------------------------
// Embedding exchange files: a JSON header line {count, dim, labels}, then one
// row per line of hex floats.

struct EmbeddingFile {
  Matrix embeddings;
  std::vector<int> labels;
};

inline void save_embeddings(const Matrix& emb, const std::vector<int>& labels,
                            const std::filesystem::path& path) {
  if (labels.size() != emb.rows()) throw ShapeError("save_embeddings: labels vs rows");
  nlohmann::json h;
  h["format"] = "proxylab-embeddings";
  h["version"] = kEmbeddingFileVersion;
  h["count"] = emb.rows();
  h["dim"] = emb.cols();
  h["labels"] = labels;
  std::string out = h.dump() + "\n";
  for (std::size_t r = 0; r < emb.rows(); ++r) {
    for (std::size_t c = 0; c < emb.cols(); ++c) {
      if (c) out += ' ';
      out += format_hex(emb(r, c));
    }
    out += '\n';
  }
  write_text_file(path, out);
}

inline EmbeddingFile load_embeddings(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FileError("cannot open embeddings '" + path.string() + "'");
  std::string line;
  if (!std::getline(f, line)) throw ParseError("missing embeddings header", 1, 0);
  EmbeddingFile out;
  std::size_t count = 0, dim = 0;
  try {
    const auto h = nlohmann::json::parse(line);
    if (h.at("format").get<std::string>() != "proxylab-embeddings")
      throw ParseError("not an embeddings file", 1, 0);
    if (h.at("version").get<int>() != kEmbeddingFileVersion)
      throw ParseError("unknown embeddings version", 1, 0);
    count = h.at("count").get<std::size_t>();
    dim = h.at("dim").get<std::size_t>();
    out.labels = h.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad embeddings header: ") + e.what(), 1, 0);
  }
  if (out.labels.size() != count) throw ParseError("label count differs from count", 1, 0);
  std::size_t offset = line.size() + 1;
  std::vector<double> values;
  values.reserve(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(f, line))
      throw ParseError("truncated embeddings file", i + 2, offset);
    if (f.eof()) throw ParseError("truncated embeddings file: row lacks a newline", i + 2, offset);
    std::istringstream in(line);
    std::string tok;
    std::size_t got = 0;
    while (in >> tok) {
      auto v = parse_double(tok);
      if (!v) throw ParseError("bad number '" + tok + "'", i + 2, offset);
      values.push_back(*v);
      ++got;
    }
    if (got != dim) throw ParseError("row has wrong number of values", i + 2, offset);
    offset += line.size() + 1;
  }
  out.embeddings = Matrix(count, dim, std::move(values));
  return out;
}

}  // namespace proxylab
