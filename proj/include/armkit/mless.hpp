#pragma once

// Filler-token insertion emulator.
//
// For an original token t whose attention row, after insertion, also covers
// filler positions i, the per-head attention output splits exactly as
//   out'_t = sum_j W'_{t,j} V_j + sum_i W'_{t,i} V_i
// and, when the logits to original tokens are unchanged (first layer, no
// positional encoding), W'_{t,j} = lambda_t * W_{t,j} with lambda_t the mass
// the row keeps on original tokens. Hence
//   out'_t = lambda_t * out_t + sigma_t,   sigma_t = sum_i W'_{t,i} V_i.
// Comparisons use per-head outputs before the output projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "armkit/error.hpp"
#include "armkit/model.hpp"
#include "armkit/rng.hpp"
#include "armkit/tensor.hpp"
#include "armkit/transformer.hpp"

namespace armkit {

enum class InsertPosition { begin, between, end, random };

inline InsertPosition parse_insert_position(const std::string& s) {
  if (s == "begin") return InsertPosition::begin;
  if (s == "between") return InsertPosition::between;
  if (s == "end") return InsertPosition::end;
  if (s == "random") return InsertPosition::random;
  throw ValueError("unknown insertion position '" + s + "' (expected begin, between, end or random)");
}

inline std::string to_string(InsertPosition p) {
  switch (p) {
    case InsertPosition::begin: return "begin";
    case InsertPosition::between: return "between";
    case InsertPosition::end: return "end";
    case InsertPosition::random: return "random";
  }
  return "?";
}

struct InsertionSpec {
  TokenId token_id = 0;
  std::size_t count = 0;
  InsertPosition position = InsertPosition::begin;
  std::optional<std::size_t> boundary_index;  // required for `between`
  std::uint64_t seed = 0;                     // used by `random`
  // When non-empty, these tokens are inserted instead of `count` copies of token_id.
  TokenSeq sequence;

  std::size_t length() const { return sequence.empty() ? count : sequence.size(); }
};

struct Insertion {
  TokenSeq tokens;
  std::vector<std::size_t> index_map;         // original position -> new position
  std::vector<std::size_t> filler_positions;  // ascending
  std::size_t insert_at = 0;
};

inline Insertion insert_tokens(std::span<const TokenId> tokens, const InsertionSpec& spec,
                               std::size_t max_seq = static_cast<std::size_t>(-1)) {
  const std::size_t n = tokens.size();
  const std::size_t k = spec.length();
  if (n + k > max_seq) {
    throw ValueError("insert_tokens: " + std::to_string(n) + " + " + std::to_string(k) +
                     " tokens exceed max_seq " + std::to_string(max_seq));
  }
  std::size_t at = 0;
  switch (spec.position) {
    case InsertPosition::begin: at = 0; break;
    case InsertPosition::end: at = n; break;
    case InsertPosition::between:
      if (!spec.boundary_index) throw ValueError("insert_tokens: between position requires a boundary index");
      if (*spec.boundary_index > n) {
        throw ValueError("insert_tokens: boundary index " + std::to_string(*spec.boundary_index) +
                         " is past the sequence end " + std::to_string(n));
      }
      at = *spec.boundary_index;
      break;
    case InsertPosition::random: {
      RngStream rng(derive_seed(spec.seed, stream::kInsertion));
      at = static_cast<std::size_t>(rng.next_u64() % (n + 1));
      break;
    }
  }
  Insertion out;
  out.insert_at = at;
  out.tokens.reserve(n + k);
  out.index_map.reserve(n);
  out.tokens.insert(out.tokens.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(at));
  for (std::size_t i = 0; i < k; ++i) {
    out.filler_positions.push_back(out.tokens.size());
    out.tokens.push_back(spec.sequence.empty() ? spec.token_id : spec.sequence[i]);
  }
  out.tokens.insert(out.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(at), tokens.end());
  for (std::size_t t = 0; t < n; ++t) out.index_map.push_back(t < at ? t : t + k);
  return out;
}

namespace detail {
inline void check_alignment(const Tensor& base_attn, const Tensor& ins_attn, std::span<const std::size_t> index_map) {
  if (base_attn.rank() != 2 || ins_attn.rank() != 2 || base_attn.rows() != base_attn.cols() ||
      ins_attn.rows() != ins_attn.cols()) {
    throw ShapeError("insertion analysis: attention matrices must be square");
  }
  if (index_map.size() != base_attn.rows()) {
    throw ShapeError("insertion analysis: index map covers " + std::to_string(index_map.size()) +
                     " tokens, baseline trace has " + std::to_string(base_attn.rows()));
  }
  for (auto m : index_map) {
    if (m >= ins_attn.rows()) throw ShapeError("insertion analysis: index map points past the inserted trace");
  }
}
}  // namespace detail

// lambda_t = (post-insertion mass from t to original tokens) / (baseline mass from t
// to the same tokens).
inline std::vector<double> extract_lambda(const Tensor& base_attn, const Tensor& ins_attn,
                                          std::span<const std::size_t> index_map) {
  detail::check_alignment(base_attn, ins_attn, index_map);
  const std::size_t S = index_map.size();
  std::vector<double> lambda(S);
  for (std::size_t t = 0; t < S; ++t) {
    double kept = 0.0, base = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      kept += ins_attn(index_map[t], index_map[j]);
      base += base_attn(t, j);
    }
    if (!(base > 0.0)) throw ValueError("extract_lambda: baseline row " + std::to_string(t) + " has no mass");
    lambda[t] = kept / base;
  }
  return lambda;
}

inline std::vector<double> extract_lambda(const ForwardTrace& base, const ForwardTrace& ins,
                                          std::span<const std::size_t> index_map, std::size_t layer,
                                          std::size_t head) {
  return extract_lambda(base.layers.at(layer).heads.at(head).attention, ins.layers.at(layer).heads.at(head).attention,
                        index_map);
}

// Attention mass each original token places on the inserted positions.
inline std::vector<double> filler_mass(const Tensor& ins_attn, std::span<const std::size_t> index_map,
                                       std::span<const std::size_t> filler_positions) {
  std::vector<double> out(index_map.size());
  for (std::size_t t = 0; t < index_map.size(); ++t) {
    double m = 0.0;
    for (auto i : filler_positions) m += ins_attn(index_map[t], i);
    out[t] = m;
  }
  return out;
}

// sigma_t = sum over inserted i of W'_{t,i} V'_i; returns [S, head_dim].
inline Tensor64 compute_bias(const Tensor& ins_attn, const Tensor& ins_values, std::span<const std::size_t> index_map,
                             std::span<const std::size_t> filler_positions) {
  if (ins_values.rank() != 2 || ins_values.rows() != ins_attn.rows()) {
    throw ShapeError("compute_bias: value matrix does not match the attention matrix");
  }
  for (auto m : index_map) {
    if (m >= ins_attn.rows()) throw ShapeError("compute_bias: index map points past the inserted trace");
  }
  Tensor64 sigma({index_map.size(), ins_values.cols()});
  for (std::size_t t = 0; t < index_map.size(); ++t) {
    for (auto i : filler_positions) {
      const double w = ins_attn(index_map[t], i);
      for (std::size_t c = 0; c < ins_values.cols(); ++c) sigma(t, c) += w * static_cast<double>(ins_values(i, c));
    }
  }
  return sigma;
}

inline Tensor64 compute_bias(const ForwardTrace& ins, const Insertion& insertion, std::size_t layer, std::size_t head) {
  const HeadTrace& h = ins.layers.at(layer).heads.at(head);
  return compute_bias(h.attention, h.values, insertion.index_map, insertion.filler_positions);
}

struct AffineParams {
  std::vector<double> lambda;  // one per original token
  Tensor64 sigma;              // [S, d]
};

// Row t -> lambda_t * attn_out[t] + sigma_t.
template <typename T>
Tensor64 apply_affine(const BasicTensor<T>& attn_out, const AffineParams& params) {
  if (attn_out.rank() != 2 || params.lambda.size() != attn_out.rows() || params.sigma.shape() != attn_out.shape()) {
    throw ShapeError("apply_affine: shapes disagree (attn_out " + shape_str(attn_out.shape()) + ", sigma " +
                     shape_str(params.sigma.shape()) + ", " + std::to_string(params.lambda.size()) + " lambdas)");
  }
  Tensor64 out(attn_out.shape());
  for (std::size_t t = 0; t < attn_out.rows(); ++t)
    for (std::size_t c = 0; c < attn_out.cols(); ++c)
      out(t, c) = params.lambda[t] * static_cast<double>(attn_out(t, c)) + params.sigma(t, c);
  return out;
}

// Mean pairwise cosine similarity of the non-zero rows; 1 when fewer than two rows qualify.
inline double direction_coherence(const Tensor64& vectors) {
  std::vector<std::size_t> rows;
  std::vector<double> norms;
  for (std::size_t t = 0; t < vectors.rows(); ++t) {
    double n2 = 0.0;
    for (auto v : vectors.row(t)) n2 += v * v;
    if (n2 > 0.0) {
      rows.push_back(t);
      norms.push_back(std::sqrt(n2));
    }
  }
  if (rows.size() < 2) return 1.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      double dot = 0.0;
      for (std::size_t c = 0; c < vectors.cols(); ++c) dot += vectors(rows[a], c) * vectors(rows[b], c);
      sum += dot / (norms[a] * norms[b]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

struct LambdaStats {
  double mean = 1.0;
  double min = 1.0;
  double max = 1.0;
};

inline LambdaStats lambda_stats(std::span<const double> lambda) {
  LambdaStats s;
  if (lambda.empty()) return s;
  s.min = *std::min_element(lambda.begin(), lambda.end());
  s.max = *std::max_element(lambda.begin(), lambda.end());
  double sum = 0.0;
  for (double l : lambda) sum += l;
  s.mean = sum / static_cast<double>(lambda.size());
  return s;
}

struct EmulationResult {
  std::vector<double> residuals;  // ||actual - affine|| / ||actual|| per original token
  double mean_residual = 0.0;
  double max_residual = 0.0;
  LambdaStats lambda;
  double coherence = 1.0;
  double max_mass_error = 0.0;  // max_t |lambda_t + filler mass_t - 1|
  AffineParams params;
  std::vector<double> filler_mass;
};

struct EmulationRun {
  Insertion insertion;
  ForwardTrace base;
  ForwardTrace inserted;
};

inline EmulationRun run_insertion(std::span<const TokenId> tokens, const InsertionSpec& spec, const ModelWeights& w,
                                  const ModelConfig& cfg) {
  EmulationRun run;
  run.insertion = insert_tokens(tokens, spec, cfg.max_seq);
  run.base = forward(tokens, w, cfg);
  run.inserted = forward(run.insertion.tokens, w, cfg);
  return run;
}

inline EmulationResult analyze_head(const EmulationRun& run, std::size_t layer, std::size_t head) {
  const HeadTrace& hb = run.base.layers.at(layer).heads.at(head);
  const HeadTrace& hi = run.inserted.layers.at(layer).heads.at(head);
  const auto& map = run.insertion.index_map;

  EmulationResult res;
  res.params.lambda = extract_lambda(hb.attention, hi.attention, map);
  res.params.sigma = compute_bias(hi.attention, hi.values, map, run.insertion.filler_positions);
  res.filler_mass = filler_mass(hi.attention, map, run.insertion.filler_positions);
  const Tensor64 affine = apply_affine(hb.output, res.params);

  res.residuals.resize(map.size());
  double sum = 0.0;
  for (std::size_t t = 0; t < map.size(); ++t) {
    double diff2 = 0.0, norm2 = 0.0;
    for (std::size_t c = 0; c < affine.cols(); ++c) {
      const double actual = hi.output(map[t], c);
      diff2 += (actual - affine(t, c)) * (actual - affine(t, c));
      norm2 += actual * actual;
    }
    res.residuals[t] = norm2 > 0.0 ? std::sqrt(diff2 / norm2) : std::sqrt(diff2);
    sum += res.residuals[t];
    res.max_residual = std::max(res.max_residual, res.residuals[t]);
    res.max_mass_error = std::max(res.max_mass_error, std::abs(res.params.lambda[t] + res.filler_mass[t] - 1.0));
  }
  res.mean_residual = map.empty() ? 0.0 : sum / static_cast<double>(map.size());
  res.lambda = lambda_stats(res.params.lambda);
  res.coherence = direction_coherence(res.params.sigma);
  return res;
}

inline EmulationResult emulate_vs_actual(std::span<const TokenId> tokens, const InsertionSpec& spec,
                                         const ModelWeights& w, const ModelConfig& cfg, std::size_t layer = 0,
                                         std::size_t head = 0) {
  if (layer >= cfg.n_layers || head >= cfg.n_heads) throw ValueError("emulate_vs_actual: layer/head out of range");
  return analyze_head(run_insertion(tokens, spec, w, cfg), layer, head);
}

// The three lambda aggregations: per token and head, per token (head mean), scalar.
struct LambdaAggregates {
  std::vector<std::vector<double>> per_head;  // [head][token]
  std::vector<double> per_token;
  double mean = 1.0;
};

inline LambdaAggregates aggregate_lambda(const EmulationRun& run, std::size_t layer) {
  LambdaAggregates agg;
  const auto& heads = run.base.layers.at(layer).heads;
  const std::size_t S = run.insertion.index_map.size();
  agg.per_token.assign(S, 0.0);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    agg.per_head.push_back(extract_lambda(run.base, run.inserted, run.insertion.index_map, layer, h));
    for (std::size_t t = 0; t < S; ++t) agg.per_token[t] += agg.per_head.back()[t] / static_cast<double>(heads.size());
  }
  agg.mean = lambda_stats(agg.per_token).mean;
  return agg;
}

struct SweepRow {
  std::size_t k = 0;
  double lambda_mean = 1.0;
  double sigma_l2_mean = 0.0;
  double residual_mean = 0.0;
  double coherence_mean = 1.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  bool lambda_nonincreasing = true;
  bool sigma_nondecreasing = true;
};

// Repeats `base_spec` with each count in `counts` (each `sequence` is ignored) and
// averages over heads and original tokens of `layer`.
inline SweepResult sweep_lengths(std::span<const TokenId> tokens, const InsertionSpec& base_spec,
                                 std::span<const std::size_t> counts, const ModelWeights& w, const ModelConfig& cfg,
                                 std::size_t layer = 0) {
  SweepResult out;
  for (std::size_t k : counts) {
    InsertionSpec spec = base_spec;
    spec.sequence.clear();
    spec.count = k;
    const EmulationRun run = run_insertion(tokens, spec, w, cfg);
    SweepRow row;
    row.k = k;
    double lam = 0.0, sig = 0.0, resid = 0.0, coh = 0.0;
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const EmulationResult r = analyze_head(run, layer, h);
      lam += r.lambda.mean;
      resid += r.mean_residual;
      coh += r.coherence;
      double s = 0.0;
      for (std::size_t t = 0; t < r.params.sigma.rows(); ++t) {
        double n2 = 0.0;
        for (auto v : r.params.sigma.row(t)) n2 += v * v;
        s += std::sqrt(n2);
      }
      sig += s / static_cast<double>(r.params.sigma.rows());
    }
    const double H = static_cast<double>(cfg.n_heads);
    row.lambda_mean = lam / H;
    row.sigma_l2_mean = sig / H;
    row.residual_mean = resid / H;
    row.coherence_mean = coh / H;
    out.rows.push_back(row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    if (out.rows[i].k < out.rows[i - 1].k) continue;
    if (out.rows[i].lambda_mean > out.rows[i - 1].lambda_mean) out.lambda_nonincreasing = false;
    if (out.rows[i].sigma_l2_mean < out.rows[i - 1].sigma_l2_mean) out.sigma_nondecreasing = false;
  }
  return out;
}

}  // namespace armkit
