#pragma once

// Measurement instruments for attention and activation snapshots.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "armkit/error.hpp"
#include "armkit/stats.hpp"
#include "armkit/tensor.hpp"
#include "armkit/transformer.hpp"

namespace armkit {

// ---------------------------------------------------------------------------
// Attention profile

// score_j = mean over i > j of attn[i, j]; the last column has no entries below
// the diagonal and scores 0.
template <typename T>
std::vector<double> column_mean_below_diag(const BasicTensor<T>& attn) {
  if (attn.rank() != 2 || attn.rows() != attn.cols()) {
    throw ShapeError("column_mean_below_diag: expected a square matrix, got " + shape_str(attn.shape()));
  }
  const std::size_t S = attn.rows();
  std::vector<double> score(S, 0.0);
  for (std::size_t j = 0; j + 1 < S; ++j) {
    double sum = 0.0;
    for (std::size_t i = j + 1; i < S; ++i) sum += static_cast<double>(attn(i, j));
    score[j] = sum / static_cast<double>(S - 1 - j);
  }
  return score;
}

// Per-head profiles of one layer plus their head mean.
struct AttentionProfile {
  std::vector<std::vector<double>> per_head;
  std::vector<double> mean;
};

inline AttentionProfile attention_profile(const LayerTrace& layer) {
  AttentionProfile p;
  for (const auto& h : layer.heads) p.per_head.push_back(column_mean_below_diag(h.attention));
  if (p.per_head.empty()) return p;
  p.mean.assign(p.per_head.front().size(), 0.0);
  for (const auto& s : p.per_head)
    for (std::size_t j = 0; j < s.size(); ++j) p.mean[j] += s[j] / static_cast<double>(p.per_head.size());
  return p;
}

// ---------------------------------------------------------------------------
// Histogram

enum class HistRange { auto_minmax, symmetric, fixed };

struct HistogramSpec {
  std::size_t n_bins = 100;
  HistRange range = HistRange::symmetric;
  double lo = 0.0;  // used with HistRange::fixed
  double hi = 1.0;
};

struct Histogram {
  std::vector<double> edges;  // n_bins + 1
  std::vector<std::uint64_t> counts;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
};

// Equal-width bins. Auto ranges use [min, max] (or [-max|x|, max|x|] when
// symmetric); a degenerate auto range widens by 0.5 on each side. Values at hi
// land in the last bin; values outside a fixed range clamp to the end bins, so
// counts always sum to N.
inline Histogram histogram(std::span<const float> acts, const HistogramSpec& spec) {
  if (spec.n_bins < 1) throw ValueError("histogram: n_bins must be >= 1");
  double lo = spec.lo, hi = spec.hi;
  if (spec.range == HistRange::fixed) {
    if (!(lo < hi)) throw ValueError("histogram: range lower bound must be below the upper bound");
  } else {
    if (acts.empty()) {
      lo = 0.0;
      hi = 1.0;
    } else if (spec.range == HistRange::auto_minmax) {
      const auto [mn, mx] = std::minmax_element(acts.begin(), acts.end());
      lo = *mn;
      hi = *mx;
    } else {
      double m = 0.0;
      for (float a : acts) m = std::max(m, std::abs(static_cast<double>(a)));
      lo = -m;
      hi = m;
    }
    if (!(lo < hi)) {
      lo -= 0.5;
      hi += 0.5;
    }
  }
  Histogram h;
  h.edges.resize(spec.n_bins + 1);
  const double width = (hi - lo) / static_cast<double>(spec.n_bins);
  for (std::size_t b = 0; b <= spec.n_bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  h.counts.assign(spec.n_bins, 0);
  for (float a : acts) {
    const double x = a;
    std::size_t b = 0;
    if (x >= hi) {
      b = spec.n_bins - 1;
    } else if (x > lo) {
      b = std::min(static_cast<std::size_t>((x - lo) / width), spec.n_bins - 1);
    }
    ++h.counts[b];
  }
  return h;
}

inline Histogram histogram(const Tensor& acts, const HistogramSpec& spec) { return histogram(acts.data(), spec); }

// ---------------------------------------------------------------------------
// Activation metrics

inline double l1_norm(std::span<const float> acts) {
  double s = 0.0;
  for (float a : acts) s += std::abs(static_cast<double>(a));
  return s;
}

inline double l2_norm(std::span<const float> acts) {
  double s = 0.0;
  for (float a : acts) s += static_cast<double>(a) * static_cast<double>(a);
  return std::sqrt(s);
}

struct RelativeSparsity {
  double value = 0.0;
  double tau = 0.0;
  double q = 50.0;
};

// tau = percentile(|base|, q); value = |{x in new : |x| < tau}| / N_new.
inline RelativeSparsity relative_sparsity(std::span<const float> base, std::span<const float> fresh, double q = 50.0) {
  if (base.empty() || fresh.empty()) throw ValueError("relative_sparsity: empty input");
  std::vector<float> mag(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) mag[i] = std::abs(base[i]);
  RelativeSparsity rs;
  rs.q = q;
  rs.tau = static_cast<double>(percentile_inplace<float>(mag, q));
  std::size_t below = 0;
  for (float x : fresh) below += std::abs(static_cast<double>(x)) < rs.tau;
  rs.value = static_cast<double>(below) / static_cast<double>(fresh.size());
  return rs;
}

// Gini coefficient of histogram counts, G = sum_ij |c_i - c_j| / (2 n sum c),
// evaluated in O(n log n) from the sorted counts.
inline double gini(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw ValueError("gini: no bins");
  std::vector<double> c(counts.begin(), counts.end());
  std::sort(c.begin(), c.end());
  const double n = static_cast<double>(c.size());
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    total += c[i];
    weighted += (2.0 * static_cast<double>(i) - n + 1.0) * c[i];
  }
  if (!(total > 0.0)) throw ValueError("gini: counts sum to zero");
  return weighted / (n * total);
}

struct ActivationMetrics {
  double relative_sparsity = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double gini = 0.0;
  double tau = 0.0;
  double q = 50.0;
};

inline nlohmann::json to_json(const ActivationMetrics& m) {
  return {{"relative_sparsity", m.relative_sparsity}, {"l1", m.l1}, {"l2", m.l2},
          {"gini", m.gini},                           {"tau", m.tau}, {"q", m.q}};
}

// Metrics of `fresh` measured against the baseline snapshot `base`.
inline ActivationMetrics activation_metrics(std::span<const float> base, std::span<const float> fresh, double q = 50.0,
                                            const HistogramSpec& hist = {}) {
  ActivationMetrics m;
  const RelativeSparsity rs = relative_sparsity(base, fresh, q);
  m.relative_sparsity = rs.value;
  m.tau = rs.tau;
  m.q = rs.q;
  m.l1 = l1_norm(fresh);
  m.l2 = l2_norm(fresh);
  m.gini = gini(histogram(fresh, hist).counts);
  return m;
}

// ---------------------------------------------------------------------------
// Token classes

enum class TokenClass { digit, op, conjunction, other };

inline constexpr std::array<TokenClass, 4> kTokenClasses = {TokenClass::digit, TokenClass::op,
                                                           TokenClass::conjunction, TokenClass::other};

inline std::string to_string(TokenClass c) {
  switch (c) {
    case TokenClass::digit: return "digit";
    case TokenClass::op: return "operator";
    case TokenClass::conjunction: return "conjunction";
    case TokenClass::other: return "other";
  }
  return "other";
}

// "−" is U+2212 MINUS SIGN.
inline const std::set<std::string, std::less<>> kOperatorTokens = {"+", "-", "−", "*", "/", "=",
                                                                   "<", ">", "^",      "%", "(", ")"};
inline const std::set<std::string, std::less<>> kConjunctionTokens = {
    "and", "or", "but", "so", "because", "then", "thus", "therefore", "since", "hence", "if"};

inline std::string_view trim(std::string_view s) {
  auto ws = [](unsigned char ch) { return std::isspace(ch) != 0; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

// digit: has at least one alphanumeric character and all of them are 0-9.
inline TokenClass classify_token(std::string_view text) {
  const std::string_view t = trim(text);
  bool any_alnum = false, all_digits = true;
  for (unsigned char ch : t) {
    if (std::isalnum(ch)) {
      any_alnum = true;
      if (!std::isdigit(ch)) all_digits = false;
    }
  }
  if (any_alnum && all_digits) return TokenClass::digit;
  if (kOperatorTokens.contains(t)) return TokenClass::op;
  std::string lower(t);
  for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (kConjunctionTokens.contains(lower)) return TokenClass::conjunction;
  return TokenClass::other;
}

// Per class: mean over its tokens of the fraction of first-layer activation
// dimensions with |a| <= epsilon. Classes without tokens are absent.
inline std::map<TokenClass, double> near_zero_proportion_by_class(const Tensor& activations,
                                                                  std::span<const std::string> token_texts,
                                                                  double epsilon) {
  if (activations.rank() != 2 || activations.rows() != token_texts.size()) {
    throw ShapeError("near_zero_proportion_by_class: " + std::to_string(token_texts.size()) +
                     " token texts for activations of shape " + shape_str(activations.shape()));
  }
  std::map<TokenClass, double> sum;
  std::map<TokenClass, std::size_t> n;
  for (std::size_t t = 0; t < token_texts.size(); ++t) {
    const auto row = activations.row(t);
    std::size_t near = 0;
    for (float a : row) near += std::abs(static_cast<double>(a)) <= epsilon;
    const TokenClass c = classify_token(token_texts[t]);
    sum[c] += static_cast<double>(near) / static_cast<double>(row.size());
    ++n[c];
  }
  for (auto& [c, s] : sum) s /= static_cast<double>(n[c]);
  return sum;
}

inline std::map<TokenClass, double> near_zero_proportion_by_class(const ForwardTrace& trace,
                                                                  std::span<const std::string> token_texts,
                                                                  double epsilon) {
  return near_zero_proportion_by_class(trace.layers.at(0).mlp_activation_pre_hook, token_texts, epsilon);
}

// ---------------------------------------------------------------------------
// Toy tokenizer

// Splits on whitespace; every run of letters, run of digits, or single other
// character becomes one piece. Ids are FNV-1a hashes of the lowercased piece
// modulo the vocabulary size, so no vocabulary file is needed.
struct ToyTokenizer {
  std::size_t vocab_size = 32;

  static std::vector<std::string> split(std::string_view text) {
    std::vector<std::string> pieces;
    std::size_t i = 0;
    while (i < text.size()) {
      const unsigned char ch = static_cast<unsigned char>(text[i]);
      if (std::isspace(ch)) {
        ++i;
        continue;
      }
      std::size_t j = i + 1;
      if (std::isalpha(ch)) {
        while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      } else if (std::isdigit(ch)) {
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
      } else if (ch >= 0x80) {
        // keep UTF-8 sequences whole
        while (j < text.size() && (static_cast<unsigned char>(text[j]) & 0xC0u) == 0x80u) ++j;
      }
      pieces.emplace_back(text.substr(i, j - i));
      i = j;
    }
    return pieces;
  }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= static_cast<unsigned char>(std::tolower(ch));
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  TokenId id_of(std::string_view piece) const { return static_cast<TokenId>(fnv1a(piece) % vocab_size); }

  TokenSeq encode(std::string_view text) const {
    TokenSeq ids;
    for (const auto& p : split(text)) ids.push_back(id_of(p));
    return ids;
  }
};

// ---------------------------------------------------------------------------
// Generation metrics

struct DiversityScore {
  std::size_t distinct_n = 0;
  std::size_t total_n = 0;
  double ratio = 0.0;
};

inline DiversityScore ngram_diversity(std::span<const TokenSeq> sequences, std::size_t n) {
  if (n < 1) throw ValueError("ngram_diversity: n must be >= 1");
  std::set<std::vector<TokenId>> seen;
  DiversityScore d;
  for (const auto& s : sequences) {
    if (s.size() < n) continue;
    for (std::size_t i = 0; i + n <= s.size(); ++i) {
      seen.emplace(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i + n));
      ++d.total_n;
    }
  }
  d.distinct_n = seen.size();
  d.ratio = d.total_n ? static_cast<double>(d.distinct_n) / static_cast<double>(d.total_n) : 0.0;
  return d;
}

// Any-of-first-k success rate (not the combinatorial unbiased estimator).
inline double pass_at_k(const std::vector<std::vector<bool>>& outcomes, std::size_t k) {
  if (k < 1) throw ValueError("pass_at_k: k must be >= 1");
  if (outcomes.empty()) return 0.0;
  std::size_t solved = 0;
  for (std::size_t p = 0; p < outcomes.size(); ++p) {
    if (outcomes[p].size() < k) {
      throw ValueError("pass_at_k: problem " + std::to_string(p) + " has " + std::to_string(outcomes[p].size()) +
                       " samples, need at least " + std::to_string(k));
    }
    solved += std::any_of(outcomes[p].begin(), outcomes[p].begin() + static_cast<std::ptrdiff_t>(k),
                          [](bool b) { return b; });
  }
  return static_cast<double>(solved) / static_cast<double>(outcomes.size());
}

}  // namespace armkit
