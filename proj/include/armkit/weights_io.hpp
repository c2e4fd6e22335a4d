#pragma once

// Weight container: `<stem>.json` manifest plus `<stem>.bin` blob.
//
// The manifest lists every tensor as {name, shape, dtype: "f32", byte_offset}
// in canonical order, together with the model config and the blob's total
// byte count. The blob is the concatenation of all tensors as little-endian
// IEEE-754 binary32, with no padding.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "armkit/error.hpp"
#include "armkit/model.hpp"

namespace armkit {

inline constexpr const char* kWeightsFormat = "armkit-weights";
inline constexpr int kWeightsVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},   {"d_model", c.d_model},         {"d_ff", c.d_ff},
          {"n_heads", c.n_heads},     {"vocab_size", c.vocab_size},   {"max_seq", c.max_seq},
          {"activation", std::string(to_string(c.activation))},      {"norm_eps", c.norm_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.activation = parse_activation(j.at("activation").get<std::string>());
    c.norm_eps = j.at("norm_eps").get<float>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("weight manifest: bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {
inline void put_f32_le(std::vector<char>& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float get_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}
}  // namespace detail

struct WeightFiles {
  std::filesystem::path manifest;
  std::filesystem::path blob;
};

inline WeightFiles weight_files(const std::filesystem::path& stem) {
  auto m = stem;
  auto b = stem;
  m += ".json";
  b += ".bin";
  return {m, b};
}

// Writes `<stem>.json` and `<stem>.bin`. Output is byte-identical for identical inputs.
inline WeightFiles save_weights(const std::filesystem::path& stem, const ModelWeights& w,
                                const ModelConfig& cfg) {
  validate_weights(w, cfg);
  const WeightFiles files = weight_files(stem);
  std::vector<char> blob;
  nlohmann::json tensors = nlohmann::json::array();
  w.for_each([&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"byte_offset", blob.size()}});
    for (float v : t.data()) detail::put_f32_le(blob, v);
  });
  nlohmann::json manifest = {{"format", kWeightsFormat},
                             {"version", kWeightsVersion},
                             {"config", model_config_to_json(cfg)},
                             {"blob", files.blob.filename().string()},
                             {"total_bytes", blob.size()},
                             {"tensors", tensors}};

  std::ofstream mf(files.manifest, std::ios::binary | std::ios::trunc);
  if (!mf) throw IoError("cannot open " + files.manifest.string() + " for writing");
  mf << manifest.dump(2) << '\n';
  std::ofstream bf(files.blob, std::ios::binary | std::ios::trunc);
  if (!bf) throw IoError("cannot open " + files.blob.string() + " for writing");
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!mf || !bf) throw IoError("failed writing weight container " + stem.string());
  return files;
}

struct LoadedModel {
  ModelConfig config;
  ModelWeights weights;
};

// Reads a container written by save_weights. `path` may be the manifest or its stem.
inline LoadedModel load_weights(const std::filesystem::path& path) {
  std::filesystem::path manifest_path = path;
  if (manifest_path.extension() != ".json") manifest_path += ".json";
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open weight manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("weight manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  if (manifest.value("format", std::string()) != kWeightsFormat ||
      manifest.value("version", 0) != kWeightsVersion) {
    throw IoError("weight manifest " + manifest_path.string() + " has an unsupported format/version");
  }

  LoadedModel out;
  out.config = model_config_from_json(manifest.at("config"));
  const auto blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw IoError("cannot open weight blob " + blob_path.string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  const auto total = manifest.at("total_bytes").get<std::size_t>();
  const auto expected = expected_shapes(out.config);
  const auto& entries = manifest.at("tensors");
  if (entries.size() != expected.size()) {
    throw IoError("weight manifest lists " + std::to_string(entries.size()) + " tensors, config needs " +
                  std::to_string(expected.size()));
  }

  out.weights.layers.resize(out.config.n_layers);
  std::size_t i = 0;
  std::size_t cursor = 0;
  out.weights.for_each([&](const std::string& name, Tensor& t) {
    const auto& e = entries[i];
    const auto ename = e.at("name").get<std::string>();
    if (ename != name) throw IoError("weight manifest entry " + std::to_string(i) + " is '" + ename +
                                     "', expected '" + name + "'");
    if (e.at("dtype").get<std::string>() != "f32") throw IoError("tensor '" + name + "': dtype must be f32");
    const auto shape = e.at("shape").get<Shape>();
    if (shape != expected[i].second) {
      throw IoError("tensor '" + name + "': shape " + shape_str(shape) + " does not match config " +
                    shape_str(expected[i].second));
    }
    const auto offset = e.at("byte_offset").get<std::size_t>();
    const std::size_t nbytes = shape_numel(shape) * 4;
    if (offset != cursor) throw IoError("tensor '" + name + "': byte_offset is not contiguous");
    if (offset + nbytes > blob.size()) {
      throw IoError("tensor '" + name + "': blob too short (needs bytes [" + std::to_string(offset) + ", " +
                    std::to_string(offset + nbytes) + "), blob has " + std::to_string(blob.size()) + ")");
    }
    std::vector<float> data(shape_numel(shape));
    for (std::size_t k = 0; k < data.size(); ++k) data[k] = detail::get_f32_le(blob.data() + offset + 4 * k);
    t = Tensor(shape, std::move(data));
    cursor = offset + nbytes;
    ++i;
  });
  if (cursor != total || blob.size() != total) {
    throw IoError("weight blob " + blob_path.string() + " has " + std::to_string(blob.size()) +
                  " bytes, manifest expects " + std::to_string(total));
  }
  validate_weights(out.weights, out.config);
  return out;
}

}  // namespace armkit
