#pragma once

// Activation Redistribution Module.
//
// Given the post-nonlinearity MLP activation tensor of one forward call:
//   1. epsilon  = kappa * MAD(acts) * c
//   2. p_raw    = |{a : |a| <= epsilon}| / N
//   3. fraction = clamp(p_raw, p_min, p_max)    (or a fixed p in direct_p mode)
//   4. select the round(fraction * N) entries of smallest |a|, ties by ascending index
//   5. add a uniform draw from R(sign) to each selected entry, where
//        R(+1) = [0, percentile(acts, p1)],  R(-1) = [min(acts), 0]
//      and sign(0) = +1. A range whose upper end falls below its lower end
//      collapses to [0, 0].
// All statistics are computed once over the unmodified input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "armkit/error.hpp"
#include "armkit/rng.hpp"
#include "armkit/stats.hpp"
#include "armkit/tensor.hpp"
#include "armkit/transformer.hpp"

namespace armkit {

// Gaussian consistency constant: 1 / Phi^-1(3/4).
inline constexpr double kMadGaussianConsistency = 1.4826;

enum class ArmMode { mad_threshold, direct_p };
// Whether statistics and selection use the whole tensor or each row separately.
enum class ArmScope { tensor, row };

struct ArmConfig {
  double c = 0.13;
  double kappa = kMadGaussianConsistency;
  double p_min = 0.02;
  double p_max = 0.25;
  double p1 = 99.5;
  ArmMode mode = ArmMode::mad_threshold;
  double p = 0.25;  // used in direct_p mode
  ArmScope scope = ArmScope::tensor;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(c > 0.0)) throw ValueError("arm config: c must be positive");
    if (!(kappa > 0.0)) throw ValueError("arm config: kappa must be positive");
    if (!(p_min > 0.0 && p_min <= p_max && p_max <= 1.0)) {
      throw ValueError("arm config: need 0 < p_min <= p_max <= 1");
    }
    if (!(p1 > 0.0 && p1 <= 100.0)) throw ValueError("arm config: p1 must lie in (0, 100]");
    if (mode == ArmMode::direct_p && !(p > 0.0 && p <= 1.0)) {
      throw ValueError("arm config: direct p must lie in (0, 1]");
    }
  }
};

struct ArmSelection {
  std::vector<std::size_t> indices;  // ascending
  std::vector<int> signs;            // +1 or -1, aligned with indices
};

struct PerturbationRange {
  double lo = 0.0;
  double hi = 0.0;
  bool collapsed = false;
};

struct ArmReport {
  double epsilon = 0.0;
  double p_raw = 0.0;
  double fraction = 0.0;
  std::size_t n_modified = 0;
  std::size_t n_total = 0;
  double q_upper = 0.0;
  double min_act = 0.0;
  bool positive_range_collapsed = false;
  bool negative_range_collapsed = false;
};

inline nlohmann::json to_json(const ArmReport& r) {
  return {{"epsilon", r.epsilon},
          {"p_raw", r.p_raw},
          {"fraction", r.fraction},
          {"n_modified", r.n_modified},
          {"n_total", r.n_total},
          {"q_upper", r.q_upper},
          {"min_act", r.min_act},
          {"positive_range_collapsed", r.positive_range_collapsed},
          {"negative_range_collapsed", r.negative_range_collapsed}};
}

inline double near_zero_threshold(std::span<const float> acts, const ArmConfig& cfg) {
  if (acts.empty()) throw ValueError("near_zero_threshold: empty activations");
  return cfg.kappa * static_cast<double>(mad<float>(acts)) * cfg.c;
}

inline double near_zero_threshold(const Tensor& acts, const ArmConfig& cfg) {
  return near_zero_threshold(acts.data(), cfg);
}

inline double raw_fraction(std::span<const float> acts, double epsilon) {
  if (!(epsilon >= 0.0)) throw ValueError("raw_fraction: epsilon must be non-negative");
  if (acts.empty()) return 0.0;
  std::size_t n = 0;
  for (float a : acts) n += std::abs(static_cast<double>(a)) <= epsilon;
  return static_cast<double>(n) / static_cast<double>(acts.size());
}

inline double raw_fraction(const Tensor& acts, double epsilon) { return raw_fraction(acts.data(), epsilon); }

inline double clip_fraction(double p, const ArmConfig& cfg) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValueError("clip_fraction: p must lie in [0, 1]");
  return std::clamp(p, cfg.p_min, cfg.p_max);
}

inline std::size_t selection_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

namespace detail {
// Selects the `count` smallest-magnitude entries (ties by ascending index) using
// an O(N) k-th order statistic on |a| followed by one ordered scan.
inline ArmSelection select_smallest(std::span<const float> acts, std::size_t count, std::vector<std::uint32_t>& keys) {
  ArmSelection sel;
  if (count == 0) return sel;
  count = std::min(count, acts.size());
  sel.indices.reserve(count);
  sel.signs.reserve(count);
  auto push = [&](std::size_t i) {
    sel.indices.push_back(i);
    sel.signs.push_back(std::signbit(acts[i]) && acts[i] != 0.0f ? -1 : 1);
  };
  if (count == acts.size()) {
    for (std::size_t i = 0; i < acts.size(); ++i) push(i);
    return sel;
  }
  KeyHistogram h;
  h.build(acts, magnitude_key);
  const RankPair r = rank_pair(acts, count - 1, magnitude_key, h, keys);
  std::size_t ties_left = count - r.below;
  for (std::size_t i = 0; i < acts.size(); ++i) {
    const std::uint32_t m = magnitude_key(acts[i]);
    if (m < r.at) {
      push(i);
    } else if (m == r.at && ties_left > 0) {
      push(i);
      --ties_left;
    }
  }
  return sel;
}
}  // namespace detail

inline ArmSelection select(std::span<const float> acts, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValueError("select: fraction must lie in (0, 1]");
  std::vector<std::uint32_t> keys;
  return detail::select_smallest(acts, selection_count(fraction, acts.size()), keys);
}

inline ArmSelection select(const Tensor& acts, double fraction) { return select(acts.data(), fraction); }

// Range for one sign given the input's upper percentile and minimum.
inline PerturbationRange perturbation_range_from_stats(int sign, double q_upper, double min_act) {
  PerturbationRange r;
  if (sign >= 0) {
    r.lo = 0.0;
    r.hi = q_upper;
  } else {
    r.lo = min_act;
    r.hi = 0.0;
  }
  if (r.hi < r.lo) r = {0.0, 0.0, true};
  return r;
}

inline PerturbationRange perturbation_range(std::span<const float> acts, int sign, const ArmConfig& cfg) {
  if (acts.empty()) throw ValueError("perturbation_range: empty activations");
  if (sign >= 0) return perturbation_range_from_stats(+1, percentile<float>(acts, cfg.p1), 0.0);
  return perturbation_range_from_stats(-1, 0.0, *std::min_element(acts.begin(), acts.end()));
}

inline PerturbationRange perturbation_range(const Tensor& acts, int sign, const ArmConfig& cfg) {
  return perturbation_range(acts.data(), sign, cfg);
}

// Reusable buffers so repeated applications do not reallocate.
struct ArmWorkspace {
  std::vector<std::uint32_t> keys;
  std::vector<std::uint32_t> selected;
};

namespace detail {
// For non-negative finite e: the largest float f with f <= e, so |a| <= e
// can be tested on float magnitudes.
inline float largest_float_at_most(double e) {
  if (e >= static_cast<double>(std::numeric_limits<float>::max())) return std::numeric_limits<float>::max();
  float f = static_cast<float>(e);
  if (static_cast<double>(f) > e) f = std::nextafter(f, 0.0f);
  return f;
}

// `out` must already hold a copy of `in`.
inline ArmReport apply_span(std::span<const float> in, std::span<float> out, const ArmConfig& cfg,
                            RngStream& rng, ArmWorkspace& ws) {
  ArmReport rep;
  rep.n_total = in.size();
  if (in.empty()) return rep;
  const std::size_t n = in.size();

  // upper percentile, median and min share one histogram pass and one gather pass
  KeyHistogram h;
  h.build(in, ordered_key);
  rep.min_act = static_cast<double>(from_ordered_key(h.min_key));
  const double rank = cfg.p1 / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto pairs = rank_pairs<2>(in, {lo, median_rank(n)}, ordered_key, h, ws.keys);
  rep.q_upper = static_cast<double>(percentile_of_pair(pairs[0], rank - static_cast<double>(lo)));

  double epsilon = 0.0;
  if (cfg.mode == ArmMode::mad_threshold) {
    const float med = median_of_pair(pairs[1], n);
    const auto dev = [med](float f) { return magnitude_key(f - med); };
    KeyHistogram hd;
    hd.build(in, dev);
    epsilon = cfg.kappa * static_cast<double>(median_of_pair(rank_pair(in, median_rank(n), dev, hd, ws.keys), n)) * cfg.c;
  }

  const PerturbationRange pos = perturbation_range_from_stats(+1, rep.q_upper, rep.min_act);
  const PerturbationRange neg = perturbation_range_from_stats(-1, rep.q_upper, rep.min_act);
  rep.positive_range_collapsed = pos.collapsed;
  rep.negative_range_collapsed = neg.collapsed;

  // One gather over magnitudes answers the near-zero count and the cut for
  // each count the clipping can produce.
  const KeyHistogram hm = magnitude_histogram(h);
  BucketGather g(hm, ws.keys);
  const std::uint32_t eps_key = magnitude_key(largest_float_at_most(epsilon));
  const auto rank_for = [n](double f) { return std::min(selection_count(f, n), n); };
  std::array<std::size_t, 2> clipped{};
  if (cfg.mode == ArmMode::mad_threshold) {
    g.want_key(eps_key);
    clipped = {rank_for(cfg.p_min), rank_for(cfg.p_max)};
  } else {
    clipped = {rank_for(cfg.p), rank_for(cfg.p)};
  }
  for (std::size_t c : clipped)
    if (c > 0 && c < n) g.want_rank(c - 1);
  g.collect(in, magnitude_key);

  std::size_t count = 0;
  std::uint32_t cut = 0xffffffffu;  // select keys below cut, plus ties_left keys equal to it
  std::size_t ties_left = 0;
  if (cfg.mode == ArmMode::mad_threshold) {
    const std::size_t near = g.count_below(eps_key, /*inclusive=*/true);
    rep.epsilon = epsilon;
    rep.p_raw = static_cast<double>(near) / static_cast<double>(n);
    rep.fraction = clip_fraction(rep.p_raw, cfg);
    count = rank_for(rep.fraction);
    if (count == near && count < n) {
      cut = eps_key;
      ties_left = count - g.count_below(eps_key, /*inclusive=*/false);
    }
  } else {
    rep.p_raw = cfg.p;
    rep.fraction = cfg.p;
    count = rank_for(rep.fraction);
  }
  rep.n_modified = count;
  if (count == 0) return rep;
  if (count < n && cut == 0xffffffffu) {
    const bool gathered = count == clipped[0] || count == clipped[1];
    const RankPair r = gathered ? g.rank(count - 1) : rank_pair(in, count - 1, magnitude_key, hm, ws.keys);
    cut = r.at;
    ties_left = count - r.below;
  }

  // branch-free collection of the selected indices, then one draw per index
  ws.selected.resize(n);
  std::size_t n_sel = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t m = magnitude_key(in[i]);
    const bool tie = m == cut && ties_left > 0;
    ws.selected[n_sel] = static_cast<std::uint32_t>(i);
    n_sel += (m < cut) | tie;
    ties_left -= tie;
  }
  for (std::size_t k = 0; k < n_sel; ++k) {
    const std::size_t i = ws.selected[k];
    const bool positive = !(std::signbit(in[i]) && in[i] != 0.0f);
    const PerturbationRange& r = positive ? pos : neg;
    const double delta = uniform<double>(rng, r.lo, r.hi);
    const float v = static_cast<float>(static_cast<double>(in[i]) + delta);
    // float rounding must not move the value against the perturbation direction
    out[i] = positive ? std::max(v, in[i]) : std::min(v, in[i]);
  }
  return rep;
}
}  // namespace detail

struct ArmResult {
  Tensor activations;
  std::vector<ArmReport> reports;  // one per tensor, or one per row in row scope
};

inline ArmResult apply(const Tensor& acts, const ArmConfig& cfg, RngStream& rng, ArmWorkspace& ws) {
  cfg.validate();
  if (acts.empty()) throw ValueError("arm apply: empty activations");
  if (acts.size() > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("arm apply: tensor too large");
  ArmResult res;
  res.activations = acts;  // apply_span only writes the selected entries
  if (cfg.scope == ArmScope::tensor || acts.rank() < 2) {
    res.reports.push_back(detail::apply_span(acts.data(), res.activations.data(), cfg, rng, ws));
  } else {
    const std::size_t width = acts.shape().back();
    for (std::size_t off = 0; off < acts.size(); off += width) {
      res.reports.push_back(detail::apply_span(acts.data().subspan(off, width),
                                               res.activations.data().subspan(off, width), cfg, rng, ws));
    }
  }
  return res;
}

inline ArmResult apply(const Tensor& acts, const ArmConfig& cfg, RngStream& rng) {
  ArmWorkspace ws;
  return apply(acts, cfg, rng, ws);
}

// Stateful ARM transform for the transformer's MLP hook. Each application
// draws from a continuing stream seeded by cfg.seed, and its reports are kept.
class ArmHook {
 public:
  explicit ArmHook(ArmConfig cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, stream::kArm)) { cfg_.validate(); }

  Tensor operator()(const Tensor& acts, const HookContext&) {
    ArmResult r = apply(acts, cfg_, rng_, ws_);
    reports_.insert(reports_.end(), r.reports.begin(), r.reports.end());
    return std::move(r.activations);
  }

  HookSpec spec(std::size_t layer_index = 0, bool prompt_only = false) {
    return HookSpec{layer_index, [this](const Tensor& a, const HookContext& c) { return (*this)(a, c); },
                    prompt_only};
  }

  const std::vector<ArmReport>& reports() const noexcept { return reports_; }
  const ArmConfig& config() const noexcept { return cfg_; }

 private:
  ArmConfig cfg_;
  RngStream rng_;
  ArmWorkspace ws_;
  std::vector<ArmReport> reports_;
};

inline HookSpec identity_hook(std::size_t layer_index = 0) {
  return HookSpec{layer_index, [](const Tensor& a, const HookContext&) { return a; }, false};
}

}  // namespace armkit
