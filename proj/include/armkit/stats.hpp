#pragma once

// Order statistics used by the near-zero threshold and the perturbation range.
//
// median: even length -> arithmetic mean of the two central order statistics.
// mad:    median(|v - median(v)|), unscaled.
// percentile: linear interpolation at rank q/100 * (n - 1) over sorted values.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <tuple>
#include <utility>
#include <vector>

#include "armkit/error.hpp"

namespace armkit {

namespace detail {
inline void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw ValueError(std::string(what) + ": empty input");
}

// Unsigned key with the same order as the float value; both zeros map to one key.
inline std::uint32_t ordered_key(float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  u = (u << 1) == 0 ? 0u : u;
  const std::uint32_t neg = 0u - (u >> 31);
  return u ^ (neg | 0x80000000u);
}

// Same order as |f|, and equal to ordered_key(|f|).
inline std::uint32_t magnitude_key(float f) { return (std::bit_cast<std::uint32_t>(f) & 0x7fffffffu) | 0x80000000u; }

inline float from_ordered_key(std::uint32_t k) {
  return std::bit_cast<float>((k & 0x80000000u) ? (k & 0x7fffffffu) : ~k);
}

// Counts of the top 11 key bits. Exact order statistics then only need the
// keys of one or two buckets.
struct KeyHistogram {
  static constexpr unsigned kShift = 21;
  std::array<std::uint32_t, 2048> count{};
  std::size_t n = 0;
  std::uint32_t min_key = 0xffffffffu;
  std::size_t n_at_most = 0;  // keys <= the `at_most` argument of build

  template <typename KeyFn>
  void build(std::span<const float> v, KeyFn key, std::uint32_t at_most = 0) {
    // four interleaved tables keep repeated buckets from serializing
    std::array<std::array<std::uint32_t, 2048>, 4> h{};
    std::array<std::uint32_t, 4> lo = {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu};
    std::size_t le = 0;
    std::size_t i = 0;
    for (; i + 4 <= v.size(); i += 4) {
      for (std::size_t l = 0; l < 4; ++l) {
        const std::uint32_t x = key(v[i + l]);
        ++h[l][x >> kShift];
        lo[l] = std::min(lo[l], x);
        le += x <= at_most;
      }
    }
    for (; i < v.size(); ++i) {
      const std::uint32_t x = key(v[i]);
      ++h[0][x >> kShift];
      lo[0] = std::min(lo[0], x);
      le += x <= at_most;
    }
    for (std::size_t b = 0; b < count.size(); ++b) count[b] = h[0][b] + h[1][b] + h[2][b] + h[3][b];
    min_key = std::min(std::min(lo[0], lo[1]), std::min(lo[2], lo[3]));
    n_at_most = le;
    n = v.size();
  }

  // Bucket holding rank k and the number of keys in lower buckets.
  std::pair<std::uint32_t, std::size_t> locate(std::size_t k) const {
    std::size_t base = 0;
    for (std::uint32_t b = 0;; ++b) {
      if (k < base + count[b]) return {b, base};
      base += count[b];
    }
  }
};

struct RankPair {
  std::uint32_t at = 0;    // key at rank k
  std::uint32_t next = 0;  // key at rank k + 1, or `at` when k is the last rank
  std::size_t below = 0;   // number of keys strictly below `at`
};

// Magnitude-key counts follow from the signed ones: a negative value in
// bucket b has its magnitude in bucket 2047 - b.
inline KeyHistogram magnitude_histogram(const KeyHistogram& h) {
  KeyHistogram m;
  m.n = h.n;
  for (std::size_t b = 1024; b < 2048; ++b) m.count[b] = h.count[b] + h.count[2047 - b];
  return m;
}

// Keys of chosen buckets, collected in one pass; answers exact rank and count
// queries that fall inside them.
class BucketGather {
 public:
  explicit BucketGather(const KeyHistogram& h, std::vector<std::uint32_t>& buf) : h_(h), buf_(buf) {}

  // Buckets holding ranks k and k + 1.
  void want_rank(std::size_t k) {
    const std::uint32_t lo = h_.locate(k).first;
    const std::uint32_t hi = h_.locate(std::min(k + 1, h_.n - 1)).first;
    for (std::uint32_t b = lo; b <= hi; ++b) wanted_[b] = 1;
  }
  void want_key(std::uint32_t x) { wanted_[x >> KeyHistogram::kShift] = 1; }

  template <typename KeyFn>
  void collect(std::span<const float> v, KeyFn key) {
    buf_.resize(v.size());
    std::size_t m = 0;
    for (float f : v) {
      const std::uint32_t x = key(f);
      buf_[m] = x;
      m += wanted_[x >> KeyHistogram::kShift];
    }
    m_ = m;
  }

  RankPair rank(std::size_t k) {
    const auto [lo, base] = h_.locate(k);
    const std::uint32_t hi = h_.locate(std::min(k + 1, h_.n - 1)).first;
    part_.clear();
    for (std::size_t j = 0; j < m_; ++j) {
      const std::uint32_t b = buf_[j] >> KeyHistogram::kShift;
      if (b >= lo && b <= hi) part_.push_back(buf_[j]);
    }
    const std::size_t kk = k - base;
    const auto at = part_.begin() + static_cast<std::ptrdiff_t>(kk);
    std::nth_element(part_.begin(), at, part_.end());
    RankPair r;
    r.at = *at;
    r.next = kk + 1 < part_.size() ? *std::min_element(at + 1, part_.end()) : r.at;
    r.below = base + static_cast<std::size_t>(std::count_if(part_.begin(), at, [&](std::uint32_t x) { return x < r.at; }));
    return r;
  }

  // Number of keys < x (strict) or <= x; x's bucket must have been collected.
  std::size_t count_below(std::uint32_t x, bool inclusive) const {
    const std::uint32_t bx = x >> KeyHistogram::kShift;
    std::size_t c = 0;
    for (std::uint32_t b = 0; b < bx; ++b) c += h_.count[b];
    for (std::size_t j = 0; j < m_; ++j) {
      const std::uint32_t y = buf_[j];
      c += (y >> KeyHistogram::kShift) == bx && (inclusive ? y <= x : y < x);
    }
    return c;
  }

 private:
  const KeyHistogram& h_;
  std::vector<std::uint32_t>& buf_;
  std::size_t m_ = 0;
  std::array<std::uint8_t, 2048> wanted_{};
  std::vector<std::uint32_t> part_;
};

// Exact keys at ranks k and k + 1 for each requested k, from one pass over v.
template <std::size_t N, typename KeyFn>
std::array<RankPair, N> rank_pairs(std::span<const float> v, const std::array<std::size_t, N>& ks, KeyFn key,
                                   const KeyHistogram& h, std::vector<std::uint32_t>& buf) {
  BucketGather g(h, buf);
  for (std::size_t k : ks) g.want_rank(k);
  g.collect(v, key);
  std::array<RankPair, N> out;
  for (std::size_t q = 0; q < N; ++q) out[q] = g.rank(ks[q]);
  return out;
}

template <typename KeyFn>
RankPair rank_pair(std::span<const float> v, std::size_t k, KeyFn key, const KeyHistogram& h,
                   std::vector<std::uint32_t>& buf) {
  return rank_pairs<1>(v, {k}, key, h, buf)[0];
}

inline std::size_t median_rank(std::size_t n) { return n % 2 ? n / 2 : n / 2 - 1; }

inline float median_of_pair(const RankPair& p, std::size_t n) {
  if (n % 2) return from_ordered_key(p.at);
  const float lower = from_ordered_key(p.at), upper = from_ordered_key(p.next);
  return lower + (upper - lower) / 2.0f;
}

inline float percentile_of_pair(const RankPair& p, double frac) {
  const double a = from_ordered_key(p.at);
  if (frac == 0.0) return static_cast<float>(a);
  return static_cast<float>(a + (static_cast<double>(from_ordered_key(p.next)) - a) * frac);
}

inline float median_from(std::span<const float> v, const KeyHistogram& h, std::vector<std::uint32_t>& buf) {
  require_nonempty(v.size(), "median");
  return median_of_pair(rank_pair(v, median_rank(v.size()), ordered_key, h, buf), v.size());
}

inline float percentile_from(std::span<const float> v, std::size_t lo, double frac, const KeyHistogram& h,
                             std::vector<std::uint32_t>& buf) {
  return percentile_of_pair(rank_pair(v, lo, ordered_key, h, buf), frac);
}

inline float median_f32(std::span<const float> v, std::vector<std::uint32_t>& buf) {
  require_nonempty(v.size(), "median");
  KeyHistogram h;
  h.build(v, ordered_key);
  return median_from(v, h, buf);
}

inline float percentile_f32(std::span<const float> v, std::size_t lo, double frac, std::vector<std::uint32_t>& buf) {
  KeyHistogram h;
  h.build(v, ordered_key);
  return percentile_from(v, lo, frac, h, buf);
}
}  // namespace detail

// Median of a scratch buffer; may reorder it.
template <typename T>
T median_inplace(std::span<T> v) {
  detail::require_nonempty(v.size(), "median");
  if constexpr (std::is_same_v<T, float>) {
    std::vector<std::uint32_t> buf;
    return detail::median_f32(v, buf);
  } else {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const T upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const T lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return lower + (upper - lower) / T{2};
  }
}

template <typename T>
T median(std::span<const T> values) {
  std::vector<T> tmp(values.begin(), values.end());
  return median_inplace<T>(tmp);
}

template <typename T>
T median(const std::vector<T>& values) {
  return median<T>(std::span<const T>(values));
}

// MAD given a precomputed median; `scratch` is resized and overwritten.
template <typename T>
T mad_about(std::span<const T> values, T center, std::vector<T>& scratch) {
  detail::require_nonempty(values.size(), "mad");
  scratch.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) scratch[i] = std::abs(values[i] - center);
  return median_inplace<T>(scratch);
}

template <typename T>
T mad(std::span<const T> values) {
  detail::require_nonempty(values.size(), "mad");
  std::vector<T> scratch;
  return mad_about<T>(values, median<T>(values), scratch);
}

template <typename T>
T mad(const std::vector<T>& values) {
  return mad<T>(std::span<const T>(values));
}

inline void validate_percentile_q(double q) {
  if (!(q >= 0.0 && q <= 100.0)) {
    throw ValueError("percentile: q must lie in [0, 100], got " + std::to_string(q));
  }
}

// Percentile of a scratch buffer; may reorder it.
template <typename T>
T percentile_inplace(std::span<T> v, double q) {
  detail::require_nonempty(v.size(), "percentile");
  validate_percentile_q(q);
  const double rank = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const double frac = rank - static_cast<double>(lo);
  if constexpr (std::is_same_v<T, float>) {
    std::vector<std::uint32_t> buf;
    return detail::percentile_f32(v, lo, frac, buf);
  } else {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    const T a = v[lo];
    if (frac == 0.0 || lo + 1 >= v.size()) return a;
    const T b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return static_cast<T>(static_cast<double>(a) + (static_cast<double>(b) - static_cast<double>(a)) * frac);
  }
}

template <typename T>
T percentile(std::span<const T> values, double q) {
  std::vector<T> tmp(values.begin(), values.end());
  return percentile_inplace<T>(tmp, q);
}

template <typename T>
T percentile(const std::vector<T>& values, double q) {
  return percentile<T>(std::span<const T>(values), q);
}

}  // namespace armkit
