#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "armkit/activation.hpp"
#include "armkit/error.hpp"
#include "armkit/rng.hpp"
#include "armkit/tensor.hpp"

namespace armkit {

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 16;
  std::size_t d_ff = 64;
  std::size_t n_heads = 2;
  std::size_t vocab_size = 32;
  std::size_t max_seq = 128;
  Activation activation = Activation::silu;
  float norm_eps = 1e-6f;

  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ValueError(std::string("model config: ") + name + " must be >= 1");
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(d_ff, "d_ff");
    positive(n_heads, "n_heads");
    positive(vocab_size, "vocab_size");
    positive(max_seq, "max_seq");
    if (d_model % n_heads != 0) {
      throw ValueError("model config: d_model (" + std::to_string(d_model) +
                       ") is not divisible by n_heads (" + std::to_string(n_heads) + ")");
    }
    if (!(norm_eps >= 0.0f) || !std::isfinite(norm_eps)) {
      throw ValueError("model config: norm_eps must be finite and non-negative");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

// Activations are row vectors: q = x * wq, so every projection is [in, out].
struct LayerWeights {
  Tensor wq, wk, wv, wo;        // [d_model, d_model]
  Tensor w_gate, w_up;          // [d_model, d_ff]
  Tensor w_down;                // [d_ff, d_model]
  Tensor gamma_attn, gamma_mlp; // [d_model]

  bool operator==(const LayerWeights&) const = default;
};

struct ModelWeights {
  Tensor embedding;    // [vocab, d_model]
  std::vector<LayerWeights> layers;
  Tensor gamma_final;  // [d_model]
  Tensor unembedding;  // [d_model, vocab]

  // Visits every tensor with its canonical name, in a fixed order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn(std::string("embedding"), self.embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      fn(p + "wq", L.wq);
      fn(p + "wk", L.wk);
      fn(p + "wv", L.wv);
      fn(p + "wo", L.wo);
      fn(p + "w_gate", L.w_gate);
      fn(p + "w_up", L.w_up);
      fn(p + "w_down", L.w_down);
      fn(p + "gamma_attn", L.gamma_attn);
      fn(p + "gamma_mlp", L.gamma_mlp);
    }
    fn(std::string("gamma_final"), self.gamma_final);
    fn(std::string("unembedding"), self.unembedding);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  bool operator==(const ModelWeights&) const = default;
};

// Shape every named tensor must have under `cfg`, in visit order.
inline std::vector<std::pair<std::string, Shape>> expected_shapes(const ModelConfig& cfg) {
  std::vector<std::pair<std::string, Shape>> out;
  const auto d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  out.emplace_back("embedding", Shape{v, d});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const char* n : {"wq", "wk", "wv", "wo"}) out.emplace_back(p + n, Shape{d, d});
    out.emplace_back(p + "w_gate", Shape{d, f});
    out.emplace_back(p + "w_up", Shape{d, f});
    out.emplace_back(p + "w_down", Shape{f, d});
    out.emplace_back(p + "gamma_attn", Shape{d});
    out.emplace_back(p + "gamma_mlp", Shape{d});
  }
  out.emplace_back("gamma_final", Shape{d});
  out.emplace_back("unembedding", Shape{d, v});
  return out;
}

inline void validate_weights(const ModelWeights& w, const ModelConfig& cfg) {
  cfg.validate();
  if (w.layers.size() != cfg.n_layers) {
    throw ShapeError("weights have " + std::to_string(w.layers.size()) + " layers, config expects " +
                     std::to_string(cfg.n_layers));
  }
  const auto expected = expected_shapes(cfg);
  std::size_t i = 0;
  w.for_each([&](const std::string& name, const Tensor& t) {
    if (t.shape() != expected[i].second) {
      throw ShapeError("weight '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(expected[i].second));
    }
    ensure_finite(t, name.c_str());
    ++i;
  });
}

// Deterministic init: matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the
// row count; the embedding ~ U(-1, 1); norm gains are ones. Tensor i draws from
// sub-stream i of the weights stream, so each tensor is independent of the others.
inline ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const RngStream root(derive_seed(seed, stream::kWeights));
  ModelWeights w;
  w.layers.resize(cfg.n_layers);
  const auto shapes = expected_shapes(cfg);
  std::size_t index = 0;
  w.for_each([&](const std::string& name, Tensor& t) {
    const Shape& shape = shapes[index].second;
    t = Tensor(shape);
    if (name == "gamma_final" || name.ends_with("gamma_attn") || name.ends_with("gamma_mlp")) {
      std::fill(t.data().begin(), t.data().end(), 1.0f);
    } else {
      RngStream rng = root.substream(index);
      const float scale = name == "embedding" ? 1.0f : 1.0f / std::sqrt(static_cast<float>(shape[0]));
      for (auto& v : t.data()) v = uniform<float>(rng, -scale, scale);
    }
    ++index;
  });
  return w;
}

}  // namespace armkit
