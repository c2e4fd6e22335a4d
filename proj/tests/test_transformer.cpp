#include <gtest/gtest.h>

#include "armkit/arm.hpp"
#include "armkit/model.hpp"
#include "armkit/transformer.hpp"

using namespace armkit;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.d_ff = 48;
  c.n_heads = 4;
  c.vocab_size = 24;
  c.max_seq = 32;
  return c;
}

TokenSeq tokens_for(std::uint64_t seed, std::size_t n, std::size_t vocab) {
  RngStream rng(seed);
  TokenSeq t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.next_u64() % vocab);
  return t;
}

// Straight-line recompute of one forward pass, sharing only the primitives.
Tensor reference_logits(std::span<const TokenId> tokens, const ModelWeights& w, const ModelConfig& cfg) {
  const std::size_t S = tokens.size(), d = cfg.d_model, hd = cfg.head_dim();
  std::vector<std::vector<double>> h(S, std::vector<double>(d));
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t c = 0; c < d; ++c) h[i][c] = w.embedding(tokens[i], c);
  auto norm = [&](const std::vector<double>& x, const Tensor& g) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double r = std::sqrt(ss / static_cast<double>(x.size()) + cfg.norm_eps);
    std::vector<double> y(x.size());
    for (std::size_t c = 0; c < x.size(); ++c) y[c] = g[c] * x[c] / r;
    return y;
  };
  auto proj = [](const std::vector<double>& x, const Tensor& W) {
    std::vector<double> y(W.cols(), 0.0);
    for (std::size_t r = 0; r < W.rows(); ++r)
      for (std::size_t c = 0; c < W.cols(); ++c) y[c] += x[r] * W(r, c);
    return y;
  };
  for (const auto& L : w.layers) {
    std::vector<std::vector<double>> q(S), k(S), v(S);
    for (std::size_t i = 0; i < S; ++i) {
      const auto x = norm(h[i], L.gamma_attn);
      q[i] = proj(x, L.wq);
      k[i] = proj(x, L.wk);
      v[i] = proj(x, L.wv);
    }
    for (std::size_t i = 0; i < S; ++i) {
      std::vector<double> concat(d, 0.0);
      for (std::size_t hh = 0; hh < cfg.n_heads; ++hh) {
        std::vector<double> s(i + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) dot += q[i][hh * hd + c] * k[j][hh * hd + c];
          s[j] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& x : s) z += (x = std::exp(x - mx));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = 0; c < hd; ++c) concat[hh * hd + c] += s[j] / z * v[j][hh * hd + c];
      }
      const auto o = proj(concat, L.wo);
      for (std::size_t c = 0; c < d; ++c) h[i][c] += o[c];
    }
    for (std::size_t i = 0; i < S; ++i) {
      const auto x = norm(h[i], L.gamma_mlp);
      auto gate = proj(x, L.w_gate);
      const auto up = proj(x, L.w_up);
      for (std::size_t f = 0; f < gate.size(); ++f) gate[f] = activate(gate[f], cfg.activation) * up[f];
      const auto o = proj(gate, L.w_down);
      for (std::size_t c = 0; c < d; ++c) h[i][c] += o[c];
    }
  }
  Tensor logits({S, cfg.vocab_size});
  for (std::size_t i = 0; i < S; ++i) {
    const auto y = proj(norm(h[i], w.gamma_final), w.unembedding);
    for (std::size_t c = 0; c < cfg.vocab_size; ++c) logits(i, c) = static_cast<float>(y[c]);
  }
  return logits;
}

}  // namespace

TEST(Model, DivisibilityIsValidated) {
  ModelConfig c = small_config();
  c.n_heads = 5;
  try {
    c.validate();
    FAIL() << "expected an error";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible"), std::string::npos);
  }
}

TEST(Model, InitIsDeterministicAndSeedSensitive) {
  const ModelConfig c = small_config();
  const ModelWeights a = init_weights(c, 1), b = init_weights(c, 1), other = init_weights(c, 2);
  EXPECT_EQ(a, b);
  std::size_t matrices = 0, differ = 0;
  std::vector<const Tensor*> pa, po;
  a.for_each([&](const std::string&, const Tensor& t) { pa.push_back(&t); });
  other.for_each([&](const std::string&, const Tensor& t) { po.push_back(&t); });
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->rank() != 2) {
      for (auto v : pa[i]->data()) EXPECT_EQ(v, 1.0f);  // norm gains start at one
      continue;
    }
    ++matrices;
    differ += !(*pa[i] == *po[i]);
  }
  EXPECT_EQ(differ, matrices);
}

TEST(Model, InitScaleFollowsFanIn) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 3);
  const float bound = 1.0f / std::sqrt(static_cast<float>(c.d_ff));
  for (auto v : w.layers[0].w_down.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Forward, MatchesStraightLineRecompute) {
  const ModelConfig c = small_config();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ModelWeights w = init_weights(c, s);
    const TokenSeq t = tokens_for(s + 100, 3 + s * 4, c.vocab_size);
    const Tensor got = forward(t, w, c).logits;
    const Tensor ref = reference_logits(t, w, c);
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-4 * (1.0 + std::abs(ref[i])));
  }
}

TEST(Forward, IsCausal) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 4);
  TokenSeq a = tokens_for(1, 12, c.vocab_size);
  TokenSeq b = a;
  b[9] = (b[9] + 1) % c.vocab_size;
  const Tensor la = forward(a, w, c).logits, lb = forward(b, w, c).logits;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t v = 0; v < c.vocab_size; ++v) EXPECT_EQ(la(i, v), lb(i, v));
  bool changed = false;
  for (std::size_t v = 0; v < c.vocab_size; ++v) changed |= la(9, v) != lb(9, v);
  EXPECT_TRUE(changed);
}

TEST(Forward, AttentionIsRowStochasticAndLowerTriangular) {
  const ModelConfig c = small_config();
  const ForwardTrace tr = forward(tokens_for(2, 10, c.vocab_size), init_weights(c, 5), c);
  for (const auto& L : tr.layers) {
    for (const auto& h : L.heads) {
      for (std::size_t i = 0; i < 10; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < 10; ++j) {
          if (j > i) {
            EXPECT_EQ(h.attention(i, j), 0.0f);
          }
          s += h.attention(i, j);
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Forward, HookIsNoOpWhenDownProjectionIsZero) {
  const ModelConfig c = small_config();
  ModelWeights w = init_weights(c, 6);
  for (auto& v : w.layers[0].w_down.data()) v = 0.0f;
  const TokenSeq t = tokens_for(3, 8, c.vocab_size);
  ArmConfig ac;
  ac.mode = ArmMode::direct_p;
  ac.p = 0.5;
  ArmHook arm(ac);
  const HookSpec spec = arm.spec(0);
  ForwardOptions opt;
  opt.mlp_hook = &spec;
  const ForwardTrace hooked = forward(t, w, c, opt);
  EXPECT_EQ(hooked.logits, forward(t, w, c).logits);
  EXPECT_NE(hooked.layers[0].mlp_activation_post_hook, hooked.layers[0].mlp_activation_pre_hook);
}

TEST(Forward, IdentityHookMatchesNoHook) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 7);
  const TokenSeq t = tokens_for(4, 8, c.vocab_size);
  const HookSpec id = identity_hook(1);
  ForwardOptions opt;
  opt.mlp_hook = &id;
  EXPECT_EQ(forward(t, w, c, opt).logits, forward(t, w, c).logits);
}

TEST(Forward, HookOnlyTouchesItsLayer) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 8);
  const TokenSeq t = tokens_for(5, 8, c.vocab_size);
  const HookSpec zero{1, [](const Tensor& a, const HookContext&) { return Tensor(a.shape()); }, false};
  ForwardOptions opt;
  opt.mlp_hook = &zero;
  const ForwardTrace a = forward(t, w, c, opt), b = forward(t, w, c);
  EXPECT_EQ(a.layers[0].mlp_activation_post_hook, b.layers[0].mlp_activation_post_hook);
  EXPECT_NE(a.logits, b.logits);
}

TEST(Forward, HookShapeChangeIsRejected) {
  const ModelConfig c = small_config();
  const HookSpec bad{0, [](const Tensor&, const HookContext&) { return Tensor({1, 1}); }, false};
  ForwardOptions opt;
  opt.mlp_hook = &bad;
  EXPECT_THROW(forward(tokens_for(1, 4, c.vocab_size), init_weights(c, 1), c, opt), ShapeError);
}

TEST(Forward, RejectsBadTokens) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 1);
  EXPECT_THROW(forward(TokenSeq{}, w, c), ValueError);
  EXPECT_THROW(forward(TokenSeq{1, 99}, w, c), ValueError);
  EXPECT_THROW(forward(TokenSeq(c.max_seq + 1, 0), w, c), ValueError);
}

TEST(Decode, GreedyAndSeededSamplingAreDeterministic) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 9);
  const TokenSeq p = tokens_for(6, 5, c.vocab_size);
  EXPECT_EQ(decode(p, w, c, nullptr, DecodePolicy::greedy(), 6), decode(p, w, c, nullptr, DecodePolicy::greedy(), 6));
  const auto s1 = decode(p, w, c, nullptr, DecodePolicy::sample(1.0, 1.0, 3), 10);
  EXPECT_EQ(s1, decode(p, w, c, nullptr, DecodePolicy::sample(1.0, 1.0, 3), 10));
  EXPECT_EQ(s1.size(), 15u);
  EXPECT_TRUE(std::equal(p.begin(), p.end(), s1.begin()));
}

TEST(Decode, GreedyPicksArgmaxOfLastRow) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 10);
  const TokenSeq p = tokens_for(7, 5, c.vocab_size);
  const auto out = decode(p, w, c, nullptr, DecodePolicy::greedy(), 1);
  EXPECT_EQ(out.back(), argmax(forward(p, w, c).logits.row(4)));
}

TEST(Decode, PromptOnlyHookSkipsLaterSteps) {
  const ModelConfig c = small_config();
  const ModelWeights w = init_weights(c, 11);
  std::vector<std::size_t> steps;
  const HookSpec spy{0, [&](const Tensor& a, const HookContext& ctx) {
                       steps.push_back(ctx.step);
                       return a;
                     },
                     true};
  decode(tokens_for(8, 4, c.vocab_size), w, c, &spy, DecodePolicy::greedy(), 3);
  EXPECT_EQ(steps, std::vector<std::size_t>{0});
}

TEST(Sampling, TinyTopPIsGreedy) {
  RngStream rng(1);
  const std::vector<float> logits = {0.1f, 3.0f, 0.2f, 2.9f};
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sample_token(logits, 1.0, 1e-6, rng), 1u);
  EXPECT_THROW(sample_token(logits, 0.0, 1.0, rng), ValueError);
}

TEST(Sampling, FrequenciesFollowSoftmax) {
  RngStream rng(2);
  const std::vector<float> logits = {0.0f, std::log(3.0f)};
  int ones = 0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) ones += sample_token(logits, 1.0, 1.0, rng) == 1;
  EXPECT_NEAR(static_cast<double>(ones) / n, 0.75, 0.01);
}
