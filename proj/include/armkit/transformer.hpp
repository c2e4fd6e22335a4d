#pragma once

// Decoder-only forward pass:
//   embedding -> n_layers x (rmsnorm -> attention -> residual -> rmsnorm -> gated MLP -> residual)
//   -> final rmsnorm -> unembedding
//
// There is no positional encoding; order enters only through the causal mask.
// Decoding recomputes the full prefix every step (no key/value cache), so an
// activation hook sees every position on every forward call.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "armkit/activation.hpp"
#include "armkit/error.hpp"
#include "armkit/model.hpp"
#include "armkit/rng.hpp"
#include "armkit/tensor.hpp"

namespace armkit {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

struct HeadTrace {
  Tensor attention;  // [S, S], row-stochastic, lower triangular
  Tensor values;     // [S, head_dim]
  Tensor output;     // [S, head_dim], attention * values
};

struct LayerTrace {
  std::vector<HeadTrace> heads;
  Tensor attention_output;         // [S, d_model], concatenated heads before wo
  Tensor mlp_activation_pre_hook;  // [S, d_ff]
  Tensor mlp_activation_post_hook; // [S, d_ff]
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Tensor logits;  // [S, vocab]
};

struct HookContext {
  std::size_t layer = 0;
  std::size_t step = 0;  // decode step; 0 is the prompt pass
};

using ActivationTransform = std::function<Tensor(const Tensor&, const HookContext&)>;

// Replaces the post-nonlinearity MLP activation of one layer.
struct HookSpec {
  std::size_t layer_index = 0;
  ActivationTransform transform;
  bool prompt_only = false;  // apply only on the prompt pass (step 0)

  bool active_for(std::size_t layer, std::size_t step) const {
    return transform && layer == layer_index && (!prompt_only || step == 0);
  }
};

// Replaces the concatenated per-head attention output of one layer, before wo.
struct AttentionHookSpec {
  std::size_t layer_index = 0;
  ActivationTransform transform;
};

struct ForwardOptions {
  const HookSpec* mlp_hook = nullptr;
  const AttentionHookSpec* attention_hook = nullptr;
  std::size_t step = 0;
};

struct AttentionResult {
  Tensor output;  // [S, d_model], after wo
  Tensor concat;  // [S, d_model], before wo
  std::vector<HeadTrace> heads;
};

// `x` is the normalized layer input, [S, d_model].
inline AttentionResult attention_block(const Tensor& x, const LayerWeights& w, const ModelConfig& cfg,
                                       const AttentionHookSpec* hook = nullptr,
                                       const HookContext& ctx = {}) {
  if (x.rank() != 2 || x.cols() != cfg.d_model) {
    throw ShapeError("attention_block: input shape " + shape_str(x.shape()) + " does not match d_model " +
                     std::to_string(cfg.d_model));
  }
  if (x.rows() > cfg.max_seq) throw ValueError("attention_block: sequence longer than max_seq");
  const std::size_t S = x.rows(), hd = cfg.head_dim();
  const Tensor q = matmul(x, w.wq);
  const Tensor k = matmul(x, w.wk);
  const Tensor v = matmul(x, w.wv);
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  AttentionResult res;
  res.concat = Tensor({S, cfg.d_model});
  res.heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t off = h * hd;
    Tensor scores({S, S});
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        float dot = 0.0f;
        for (std::size_t c = 0; c < hd; ++c) dot += q(i, off + c) * k(j, off + c);
        scores(i, j) = dot * scale;
      }
    }
    HeadTrace head;
    head.attention = softmax_rows(scores, /*causal=*/true);
    head.values = slice_cols(v, off, hd);
    head.output = matmul(head.attention, head.values);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t c = 0; c < hd; ++c) res.concat(i, off + c) = head.output(i, c);
    res.heads.push_back(std::move(head));
  }
  if (hook && hook->transform && hook->layer_index == ctx.layer) {
    Tensor altered = hook->transform(res.concat, ctx);
    if (altered.shape() != res.concat.shape()) throw ShapeError("attention hook changed the tensor shape");
    res.concat = std::move(altered);
  }
  res.output = matmul(res.concat, w.wo);
  return res;
}

struct MlpResult {
  Tensor output;       // [S, d_model]
  Tensor activation;   // [S, d_ff], phi(x * w_gate)
  Tensor altered;      // [S, d_ff], hook(activation)
};

// output = (hook(phi(x * w_gate)) ⊙ (x * w_up)) * w_down
inline MlpResult mlp_block(const Tensor& x, const LayerWeights& w, const ModelConfig& cfg,
                           const HookSpec* hook = nullptr, const HookContext& ctx = {}) {
  if (x.rank() != 2 || x.cols() != cfg.d_model) {
    throw ShapeError("mlp_block: input shape " + shape_str(x.shape()) + " does not match d_model " +
                     std::to_string(cfg.d_model));
  }
  MlpResult res;
  res.activation = activation_fn(matmul(x, w.w_gate), cfg.activation);
  if (hook && hook->active_for(ctx.layer, ctx.step)) {
    res.altered = hook->transform(res.activation, ctx);
    if (res.altered.shape() != res.activation.shape()) {
      throw ShapeError("mlp hook changed the activation shape");
    }
    ensure_finite(res.altered, "mlp hook output");
  } else {
    res.altered = res.activation;
  }
  res.output = matmul(hadamard(res.altered, matmul(x, w.w_up)), w.w_down);
  return res;
}

inline void validate_tokens(std::span<const TokenId> tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw ValueError("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq) {
    throw ValueError("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw ValueError("forward: token id " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " is outside the vocabulary");
    }
  }
}

inline ForwardTrace forward(std::span<const TokenId> tokens, const ModelWeights& w, const ModelConfig& cfg,
                            const ForwardOptions& opt = {}) {
  validate_tokens(tokens, cfg);
  if (w.layers.size() != cfg.n_layers) throw ShapeError("forward: weights/config layer count mismatch");
  const std::size_t S = tokens.size();
  Tensor h({S, cfg.d_model});
  for (std::size_t i = 0; i < S; ++i) {
    const auto src = w.embedding.row(tokens[i]);
    std::copy(src.begin(), src.end(), h.row(i).begin());
  }

  ForwardTrace trace;
  trace.layers.reserve(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& L = w.layers[l];
    const HookContext ctx{l, opt.step};
    AttentionResult attn = attention_block(rmsnorm_rows(h, L.gamma_attn, cfg.norm_eps), L, cfg,
                                           opt.attention_hook, ctx);
    h = add(h, attn.output);
    MlpResult mlp = mlp_block(rmsnorm_rows(h, L.gamma_mlp, cfg.norm_eps), L, cfg, opt.mlp_hook, ctx);
    h = add(h, mlp.output);

    LayerTrace lt;
    lt.heads = std::move(attn.heads);
    lt.attention_output = std::move(attn.concat);
    lt.mlp_activation_pre_hook = std::move(mlp.activation);
    lt.mlp_activation_post_hook = std::move(mlp.altered);
    trace.layers.push_back(std::move(lt));
  }
  trace.logits = matmul(rmsnorm_rows(h, w.gamma_final, cfg.norm_eps), w.unembedding);
  return trace;
}

struct DecodePolicy {
  enum class Kind { greedy, sample } kind = Kind::greedy;
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;

  static DecodePolicy greedy() { return {}; }
  static DecodePolicy sample(double temperature, double top_p, std::uint64_t seed) {
    return {Kind::sample, temperature, top_p, seed};
  }
};

// Index of the largest logit; ties resolve to the lowest id.
inline TokenId argmax(std::span<const float> logits) {
  return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Nucleus sampling: softmax(logits / T), keep the smallest prefix of the
// probability-sorted ids (stable by id) whose mass reaches top_p, renormalize, draw.
inline TokenId sample_token(std::span<const float> logits, double temperature, double top_p, RngStream& rng) {
  if (!(temperature > 0.0)) throw ValueError("sample: temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValueError("sample: top_p must lie in (0, 1]");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    z += p[i];
  }
  std::vector<std::size_t> order(p.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double kept = 0.0;
  std::size_t n_keep = 0;
  while (n_keep < order.size()) {
    kept += p[order[n_keep]] / z;
    ++n_keep;
    if (kept >= top_p) break;
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < n_keep; ++i) mass += p[order[i]];
  const double u = rng.next_unit() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < n_keep; ++i) {
    acc += p[order[i]];
    if (u < acc) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[n_keep - 1]);
}

// Autoregressive generation; returns prompt + generated tokens.
inline TokenSeq decode(std::span<const TokenId> prompt, const ModelWeights& w, const ModelConfig& cfg,
                       const HookSpec* hook, const DecodePolicy& policy, std::size_t max_new) {
  validate_tokens(prompt, cfg);
  TokenSeq seq(prompt.begin(), prompt.end());
  RngStream rng(derive_seed(policy.seed, stream::kDecode));
  for (std::size_t step = 0; step < max_new; ++step) {
    ForwardOptions opt;
    opt.mlp_hook = hook;
    opt.step = step;
    const ForwardTrace tr = forward(seq, w, cfg, opt);
    const auto last = tr.logits.row(seq.size() - 1);
    seq.push_back(policy.kind == DecodePolicy::Kind::greedy
                      ? argmax(last)
                      : sample_token(last, policy.temperature, policy.top_p, rng));
  }
  return seq;
}

}  // namespace armkit
