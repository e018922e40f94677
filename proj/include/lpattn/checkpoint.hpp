#pragma once

// Checkpoint layout:
//   uint64 little-endian  header length H
//   H bytes               UTF-8 JSON header
//   payload               raw little-endian float32 values
// The header carries the model config, the vocabulary symbols and a manifest
// of {name, shape, offset, count}; offsets are bytes from the payload start.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpattn/data.hpp"
#include "lpattn/error.hpp"
#include "lpattn/model.hpp"

namespace lpattn {

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json a{{"variant", to_string(c.attention.variant)},
                   {"p", c.attention.p},
                   {"heads", c.attention.heads},
                   {"head_dim", c.attention.head_dim},
                   {"dropout", c.attention.dropout},
                   {"norm_epsilon", c.attention.norm_epsilon}};
  if (c.attention.alpha_init) a["alpha_init"] = *c.attention.alpha_init;
  return {{"n_layer", c.n_layer},     {"n_head", c.n_head},         {"d_model", c.d_model},
          {"context_len", c.context_len}, {"vocab_size", c.vocab_size}, {"dropout", c.dropout},
          {"tie_weights", c.tie_weights}, {"seed", c.seed},             {"attention", a}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.n_layer = j.at("n_layer").get<std::size_t>();
    c.n_head = j.at("n_head").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.context_len = j.at("context_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.tie_weights = j.at("tie_weights").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& a = j.at("attention");
    c.attention.variant = parse_variant(a.at("variant").get<std::string>());
    c.attention.p = a.at("p").get<double>();
    c.attention.heads = a.at("heads").get<std::size_t>();
    c.attention.head_dim = a.at("head_dim").get<std::size_t>();
    c.attention.dropout = a.at("dropout").get<double>();
    c.attention.norm_epsilon = a.at("norm_epsilon").get<double>();
    if (a.contains("alpha_init")) c.attention.alpha_init = a.at("alpha_init").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint config: ") + e.what());
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const GptModel<T>& model, const CharVocab& vocab) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.parameters()) {
    manifest.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}, {"count", p.tensor.size()}});
    offset += p.tensor.size() * sizeof(float);
  }
  const nlohmann::json header{{"format", "lpattn-checkpoint"},
                              {"version", 1},
                              {"config", to_json(model.config())},
                              {"vocab", vocab.symbols_utf8()},
                              {"parameters", manifest}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string() + ": cannot write checkpoint");
  auto put_u64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put_u64(text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.parameters()) {
    for (T v : p.tensor.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int i = 0; i < 4; ++i) os.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  if (!os) throw IoError(path.string() + ": write failed");
}

template <typename T>
struct LoadedCheckpoint {
  GptModel<T> model;
  CharVocab vocab;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string() + ": cannot open checkpoint");
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = is.get();
    if (c == EOF) throw IoError(path.string() + ": truncated checkpoint header");
    header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  const auto file_size = std::filesystem::file_size(path);
  if (header_len > file_size - 8) throw IoError(path.string() + ": checkpoint header length exceeds file size");
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw IoError(path.string() + ": truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
  }
  if (header.value("format", "") != "lpattn-checkpoint") throw IoError(path.string() + ": not an lpattn checkpoint");

  GptModel<T> model(model_config_from_json(header.at("config")));
  CharVocab vocab = CharVocab::from_symbols(header.at("vocab").get<std::string>());
  const auto& manifest = header.at("parameters");
  auto& params = model.parameters();
  if (manifest.size() != params.size()) throw IoError(path.string() + ": parameter manifest does not match config");

  std::vector<char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = manifest[i];
    auto& p = params[i];
    if (entry.at("name").get<std::string>() != p.name || entry.at("shape").get<Shape>() != p.tensor.shape()) {
      throw IoError(path.string() + ": manifest entry " + std::to_string(i) + " does not match parameter " + p.name);
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset + p.tensor.size() * 4 > payload.size()) throw IoError(path.string() + ": payload truncated at " + p.name);
    auto values = p.tensor.data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[offset + j * 4 + b])) << (8 * b);
      }
      values[j] = static_cast<T>(std::bit_cast<float>(bits));
    }
  }
  return {std::move(model), std::move(vocab)};
}

}  // namespace lpattn
