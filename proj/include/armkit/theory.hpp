#pragma once

// Numerical checks of how an affine change of the attention output moves the
// variance of the gate projection and of the activation output. Everything
// here runs in double precision.
//
// Conventions
//   rmsnorm      y = gamma ⊙ x / r,  r = sqrt(mean(x^2) + eps),  x in R^d
//   scaling      x(λ) = res + λ·a  (a = projected attention output U·A)
//                z(λ) = w·y(x(λ)),  g(λ) = w·J(x(λ))·a
//   bias         x = x0 + W·s with W: [d, m] and s in R^m zero-mean, bounded,
//                independent of x0;  z = w·y(x)
//   gate row     w in R^d (one row of the gate projection, i.e. e_j^T W_gate)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "armkit/activation.hpp"
#include "armkit/analytics.hpp"
#include "armkit/error.hpp"
#include "armkit/model.hpp"
#include "armkit/parallel.hpp"
#include "armkit/rng.hpp"
#include "armkit/tensor.hpp"
#include "armkit/transformer.hpp"

namespace armkit::theory {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Sample moments (two-pass, ascending order)

inline double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double covariance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ValueError("covariance: need two equal-length samples of size >= 2");
  const double ma = mean(a), mb = mean(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size());
}

inline double variance(std::span<const double> a) { return covariance(a, a); }

inline double relative_error(double predicted, double empirical, double floor = 1e-300) {
  return std::abs(predicted - empirical) / std::max(std::abs(empirical), floor);
}

// ---------------------------------------------------------------------------
// RMSNorm Jacobian

inline double rms_denominator(std::span<const double> x, double eps) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return std::sqrt(ss / static_cast<double>(x.size()) + eps);
}

// J[i, j] = gamma_i (δ_ij / r - x_i x_j / (d r^3))
inline Tensor64 rmsnorm_jacobian(std::span<const double> x, std::span<const double> gamma, double eps) {
  if (x.empty()) throw ValueError("rmsnorm_jacobian: empty input");
  if (gamma.size() != x.size()) throw ShapeError("rmsnorm_jacobian: gamma length differs from x");
  const std::size_t d = x.size();
  const double r = rms_denominator(x, eps);
  if (!(r > 0.0)) throw ValueError("rmsnorm_jacobian: undefined at the origin with eps = 0");
  const double r3d = r * r * r * static_cast<double>(d);
  Tensor64 J({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) J(i, j) = gamma[i] * ((i == j ? 1.0 / r : 0.0) - x[i] * x[j] / r3d);
  return J;
}

// J·v without forming J.
inline Vec rmsnorm_jvp(std::span<const double> x, std::span<const double> gamma, double eps, std::span<const double> v) {
  const std::size_t d = x.size();
  const double r = rms_denominator(x, eps);
  double xv = 0.0;
  for (std::size_t i = 0; i < d; ++i) xv += x[i] * v[i];
  const double c = xv / (static_cast<double>(d) * r * r * r);
  Vec out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = gamma[i] * (v[i] / r - x[i] * c);
  return out;
}

inline Vec rmsnorm_vec(std::span<const double> x, std::span<const double> gamma, double eps) {
  Vec y(x.size());
  rmsnorm_into<double>(x, gamma, eps, y);
  return y;
}

// Central-difference Jacobian of rmsnorm, column by column.
inline Tensor64 numeric_rmsnorm_jacobian(std::span<const double> x, std::span<const double> gamma, double eps,
                                         double h = 1e-6) {
  const std::size_t d = x.size();
  Tensor64 J({d, d});
  Vec xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t j = 0; j < d; ++j) {
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const Vec yp = rmsnorm_vec(xp, gamma, eps), ym = rmsnorm_vec(xm, gamma, eps);
    for (std::size_t i = 0; i < d; ++i) J(i, j) = (yp[i] - ym[i]) / (2.0 * h);
    xp[j] = xm[j] = x[j];
  }
  return J;
}

struct JacobianCheck {
  Tensor64 analytic;
  Tensor64 numeric;
  double max_abs_error = 0.0;
};

inline JacobianCheck check_rmsnorm_jacobian(std::span<const double> x, std::span<const double> gamma, double eps,
                                            double h = 1e-6) {
  JacobianCheck c{rmsnorm_jacobian(x, gamma, eps), numeric_rmsnorm_jacobian(x, gamma, eps, h), 0.0};
  for (std::size_t i = 0; i < c.analytic.size(); ++i)
    c.max_abs_error = std::max(c.max_abs_error, std::abs(c.analytic[i] - c.numeric[i]));
  ensure_finite(c.analytic, "rmsnorm_jacobian");
  ensure_finite(c.numeric, "numeric_rmsnorm_jacobian");
  return c;
}

// ---------------------------------------------------------------------------
// Variance report

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool empty = false;
};

struct VarianceReport {
  double predicted = 0.0;
  double empirical = 0.0;
  double relative_error = 0.0;
  std::size_t n_samples = 0;
  std::optional<Interval> admissible_interval;
  // scaling-only diagnostics
  double cov_zg = 0.0;
  double var_g = 0.0;
  double first_order_term = 0.0;  // 2 Cov(z, g) Δλ, measured rather than assumed zero
};

inline constexpr double kRelativeErrorFloor = 1e-12;

// lo = 2|cov| / var_g, hi = 3 var_g / K; empty when lo > hi.
inline Interval admissible_dlambda(double cov_zg, double var_g, double K) {
  if (!(var_g > 0.0)) throw ValueError("admissible_dlambda: var_g must be positive");
  if (!(K > 0.0)) throw ValueError("admissible_dlambda: K must be positive");
  Interval iv{2.0 * std::abs(cov_zg) / var_g, 3.0 * var_g / K, false};
  iv.empty = iv.lo > iv.hi;
  return iv;
}

// From paired samples: z(λ), g(λ) and the recomputed z(λ + Δλ).
inline VarianceReport variance_change_scaling(std::span<const double> z, std::span<const double> g,
                                              std::span<const double> z_shifted, double dlambda) {
  if (z.size() < 2 || g.size() != z.size() || z_shifted.size() != z.size()) {
    throw ValueError("variance_change_scaling: need >= 2 paired samples");
  }
  VarianceReport r;
  r.n_samples = z.size();
  r.cov_zg = covariance(z, g);
  r.var_g = variance(g);
  r.first_order_term = 2.0 * r.cov_zg * dlambda;
  r.predicted = r.first_order_term + r.var_g * dlambda * dlambda;
  r.empirical = variance(z_shifted) - variance(z);
  r.relative_error = relative_error(r.predicted, r.empirical, kRelativeErrorFloor);
  return r;
}

// res and a are [N, d] sample sets. With `linear`, rmsnorm is replaced by the identity.
struct ScalingSystem {
  Tensor64 residual;
  Tensor64 direction;
  Vec gamma;
  Vec gate_row;
  double eps = 1e-6;
  bool linear = false;

  std::size_t n() const { return residual.rows(); }
  std::size_t d() const { return residual.cols(); }

  void validate() const {
    if (residual.rank() != 2 || residual.shape() != direction.shape()) {
      throw ShapeError("scaling system: residual and direction samples must share a [N, d] shape");
    }
    if (gamma.size() != d() || gate_row.size() != d()) throw ShapeError("scaling system: gamma/gate row length");
  }

  // z_n(λ) and optionally g_n(λ) for all samples.
  void evaluate(double lambda, Vec& z, Vec* g, std::size_t threads = 1) const {
    validate();
    const std::size_t N = n(), D = d();
    z.assign(N, 0.0);
    if (g) g->assign(N, 0.0);
    constexpr std::size_t kBlock = 1 << 14;
    const std::size_t blocks = (N + kBlock - 1) / kBlock;
    for_each_block(blocks, threads, [&](std::size_t b) {
      Vec x(D), y(D);
      for (std::size_t s = b * kBlock; s < std::min(N, (b + 1) * kBlock); ++s) {
        const auto r = residual.row(s), a = direction.row(s);
        for (std::size_t i = 0; i < D; ++i) x[i] = r[i] + lambda * a[i];
        if (linear) {
          y = x;
        } else {
          rmsnorm_into<double>(x, gamma, eps, y);
        }
        double zs = 0.0;
        for (std::size_t i = 0; i < D; ++i) zs += gate_row[i] * y[i];
        z[s] = zs;
        if (g) {
          double gs = 0.0;
          if (linear) {
            for (std::size_t i = 0; i < D; ++i) gs += gate_row[i] * a[i];
          } else {
            const Vec ja = rmsnorm_jvp(x, gamma, eps, a);
            for (std::size_t i = 0; i < D; ++i) gs += gate_row[i] * ja[i];
          }
          (*g)[s] = gs;
        }
      }
    });
  }
};

inline VarianceReport variance_change_scaling(const ScalingSystem& sys, double lambda, double dlambda,
                                              std::size_t threads = 1) {
  Vec z, g, zs;
  sys.evaluate(lambda, z, &g, threads);
  sys.evaluate(lambda + dlambda, zs, nullptr, threads);
  return variance_change_scaling(z, g, zs, dlambda);
}

// Estimate of K: the largest |d^3/dλ^3 Var[z(λ)]| seen on a grid over
// [lambda, lambda + span], by third-order central differences.
inline double estimate_k(const ScalingSystem& sys, double lambda, double span, std::size_t grid = 8,
                         std::size_t threads = 1) {
  const double h = span / static_cast<double>(grid);
  auto var_at = [&](double l) {
    Vec z;
    sys.evaluate(l, z, nullptr, threads);
    return variance(z);
  };
  double k = 0.0;
  for (std::size_t i = 0; i <= grid; ++i) {
    const double l = lambda + h * static_cast<double>(i);
    const double d3 = (var_at(l + 2 * h) - 2 * var_at(l + h) + 2 * var_at(l - h) - var_at(l - 2 * h)) / (2 * h * h * h);
    k = std::max(k, std::abs(d3));
  }
  return k;
}

// ---------------------------------------------------------------------------
// Bias perturbation

// Lower-triangular L with L L^T = C for a symmetric PSD C. Zero pivots (within
// tolerance) give zero columns; a clearly negative pivot or asymmetry is an error.
inline Tensor64 psd_factor(const Tensor64& C, double tol = 1e-12) {
  if (C.rank() != 2 || C.rows() != C.cols()) throw ShapeError("covariance must be square");
  const std::size_t m = C.rows();
  double scale = 0.0;
  for (auto v : C.data()) scale = std::max(scale, std::abs(v));
  const double atol = tol * std::max(scale, 1.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(C(i, j) - C(j, i)) > atol) throw ValueError("covariance is not symmetric");
  Tensor64 L({m, m});
  for (std::size_t j = 0; j < m; ++j) {
    double diag = C(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= L(j, k) * L(j, k);
    if (diag < -atol) throw ValueError("covariance is not positive semidefinite");
    if (diag <= atol) continue;
    L(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < m; ++i) {
      double s = C(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
  }
  // reject matrices whose factor does not reproduce them (indefinite with zero pivots)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += L(i, k) * L(j, k);
      if (std::abs(s - C(i, j)) > 1e3 * atol) throw ValueError("covariance is not positive semidefinite");
    }
  }
  return L;
}

inline Tensor64 isotropic_covariance(std::size_t m, double sigma2) {
  if (!(sigma2 >= 0.0)) throw ValueError("isotropic covariance: sigma^2 must be non-negative");
  Tensor64 C({m, m});
  for (std::size_t i = 0; i < m; ++i) C(i, i) = sigma2;
  return C;
}

// Bounded zero-mean noise s = L u with u_i ~ U(-sqrt 3, sqrt 3) (unit variance), so Cov(s) = L L^T.
struct BoundedNoise {
  Tensor64 factor;

  explicit BoundedNoise(const Tensor64& cov) : factor(psd_factor(cov)) {}

  std::size_t dim() const { return factor.rows(); }

  void draw(RngStream& rng, Vec& u, Vec& s) const {
    const std::size_t m = dim();
    const double a = std::sqrt(3.0);
    u.resize(m);
    s.assign(m, 0.0);
    for (auto& v : u) v = uniform<double>(rng, -a, a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k <= i; ++k) s[i] += factor(i, k) * u[k];
  }
};

// v = W^T J(x0)^T w, so that w·J·W·s = v·s.
inline Vec bias_sensitivity(std::span<const double> x0, const Tensor64& W, std::span<const double> gamma, double eps,
                            std::span<const double> gate_row) {
  const Tensor64 J = rmsnorm_jacobian(x0, gamma, eps);
  const std::size_t d = x0.size();
  if (W.rank() != 2 || W.rows() != d) throw ShapeError("variance_change_bias: W must be [d, m]");
  if (gate_row.size() != d) throw ShapeError("variance_change_bias: gate row length differs from d");
  Vec wj(d, 0.0);  // w^T J
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) wj[j] += gate_row[i] * J(i, j);
  Vec v(W.cols(), 0.0);
  for (std::size_t k = 0; k < W.cols(); ++k)
    for (std::size_t j = 0; j < d; ++j) v[k] += wj[j] * W(j, k);
  return v;
}

// predicted Var[z] = w J W C W^T J^T w^T at x0; empirical by pushing sampled
// noise through the actual rmsnorm and the gate row.
inline VarianceReport variance_change_bias(std::span<const double> x0, const Tensor64& W, const Tensor64& noise_cov,
                                           std::span<const double> gamma, double eps, std::span<const double> gate_row,
                                           std::size_t n_samples, std::uint64_t seed, std::size_t threads = 1) {
  if (n_samples < 2) throw ValueError("variance_change_bias: need >= 2 samples");
  if (noise_cov.rank() != 2 || noise_cov.rows() != W.cols()) {
    throw ShapeError("variance_change_bias: noise covariance must be [m, m] with m = W columns");
  }
  const BoundedNoise noise(noise_cov);
  const Vec v = bias_sensitivity(x0, W, gamma, eps, gate_row);

  VarianceReport r;
  r.n_samples = n_samples;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) r.predicted += v[i] * noise_cov(i, j) * v[j];

  const std::size_t d = x0.size(), m = W.cols();
  Vec z(n_samples);
  constexpr std::size_t kBlock = 1 << 14;
  const std::size_t blocks = (n_samples + kBlock - 1) / kBlock;
  const RngStream root(derive_seed(seed, stream::kTheory));
  for_each_block(blocks, threads, [&](std::size_t b) {
    RngStream rng = root.substream(b);
    Vec u, s, x(d), y(d);
    for (std::size_t n = b * kBlock; n < std::min(n_samples, (b + 1) * kBlock); ++n) {
      noise.draw(rng, u, s);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = x0[i];
        for (std::size_t k = 0; k < m; ++k) acc += W(i, k) * s[k];
        x[i] = acc;
      }
      rmsnorm_into<double>(x, gamma, eps, y);
      double zs = 0.0;
      for (std::size_t i = 0; i < d; ++i) zs += gate_row[i] * y[i];
      z[n] = zs;
    }
  });
  r.empirical = variance(z);
  r.relative_error = relative_error(r.predicted, r.empirical, kRelativeErrorFloor);
  return r;
}

// ---------------------------------------------------------------------------
// Activation-output moments

struct MomentPrediction {
  double mean = 0.0;
  double var = 0.0;
};

// Second-order Taylor moments of phi(mu + s) for zero-mean s with variance noise_var:
//   E ≈ phi(mu) + phi''(mu) noise_var / 2,  Var ≈ phi'(mu)^2 noise_var.
inline MomentPrediction taylor_moments(Activation phi, double mu, double noise_var) {
  if (!(noise_var >= 0.0) || !std::isfinite(noise_var)) throw ValueError("taylor_moments: noise variance must be finite and >= 0");
  return {activate(mu, phi) + 0.5 * activate_d2(mu, phi) * noise_var,
          activate_d1(mu, phi) * activate_d1(mu, phi) * noise_var};
}

struct MomentEstimate {
  double mean = 0.0;
  double var = 0.0;
  std::size_t n_samples = 0;
};

// Monte-Carlo moments of phi(mu + s), s ~ U(-h, h). Draws are stratified in |s|
// (one jittered draw per stratum) and used antithetically (±s), which keeps
// the estimate unbiased while removing the odd-order sampling noise.
// Moments are accumulated as offsets from phi(mu) to avoid cancellation.
inline MomentEstimate sample_moments_uniform(Activation phi, double mu, double half_width, std::size_t n_samples,
                                             std::uint64_t seed) {
  if (n_samples < 2) throw ValueError("sample_moments_uniform: need >= 2 samples");
  if (!(half_width >= 0.0)) throw ValueError("sample_moments_uniform: half width must be >= 0");
  const std::size_t pairs = n_samples / 2;
  RngStream rng(derive_seed(seed, stream::kTheory));
  const double f0 = activate(mu, phi);
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const double s = half_width * (static_cast<double>(k) + rng.next_unit()) / static_cast<double>(pairs);
    const double dp = activate(mu + s, phi) - f0;
    const double dm = activate(mu - s, phi) - f0;
    s1 += dp + dm;
    s2 += dp * dp + dm * dm;
  }
  const double n = static_cast<double>(2 * pairs);
  const double m1 = s1 / n;
  return {f0 + m1, s2 / n - m1 * m1, 2 * pairs};
}

inline double uniform_variance(double half_width) { return half_width * half_width / 3.0; }

// ---------------------------------------------------------------------------
// Combined variance

inline double combined_variance(double bias_component, double scaling_component) {
  if (!(bias_component >= 0.0) || !(scaling_component >= 0.0)) {
    throw ValueError("combined_variance: components must be non-negative");
  }
  return bias_component + scaling_component;
}

struct JointVarianceResult {
  double bias_only = 0.0;     // ΔVar with bias noise alone
  double scaling_only = 0.0;  // ΔVar with λ -> λ + Δλ alone
  double joint = 0.0;         // ΔVar with both
  double sum = 0.0;
  double relative_error = 0.0;  // |joint - sum| / |sum|
};

// Three runs over the same base samples: bias only, scaling only, both. The
// noise draws are shared between the bias-only and joint runs.
inline JointVarianceResult joint_variance_experiment(const ScalingSystem& sys, double lambda, double dlambda,
                                                     const Tensor64& W, const Tensor64& noise_cov, std::uint64_t seed) {
  sys.validate();
  const BoundedNoise noise(noise_cov);
  const std::size_t N = sys.n(), D = sys.d(), m = W.cols();
  if (W.rows() != D) throw ShapeError("joint_variance_experiment: W must be [d, m]");
  RngStream rng(derive_seed(seed, stream::kTheory));
  Vec z0(N), zb(N), zs(N), zj(N), x(D), y(D), u, s, wsn(D);
  auto project = [&](std::span<const double> xx) {
    if (sys.linear) {
      y.assign(xx.begin(), xx.end());
    } else {
      rmsnorm_into<double>(xx, sys.gamma, sys.eps, y);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < D; ++i) acc += sys.gate_row[i] * y[i];
    return acc;
  };
  for (std::size_t n = 0; n < N; ++n) {
    noise.draw(rng, u, s);
    for (std::size_t i = 0; i < D; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) acc += W(i, k) * s[k];
      wsn[i] = acc;
    }
    const auto r = sys.residual.row(n), a = sys.direction.row(n);
    for (std::size_t i = 0; i < D; ++i) x[i] = r[i] + lambda * a[i];
    z0[n] = project(x);
    for (std::size_t i = 0; i < D; ++i) x[i] = r[i] + lambda * a[i] + wsn[i];
    zb[n] = project(x);
    for (std::size_t i = 0; i < D; ++i) x[i] = r[i] + (lambda + dlambda) * a[i];
    zs[n] = project(x);
    for (std::size_t i = 0; i < D; ++i) x[i] = r[i] + (lambda + dlambda) * a[i] + wsn[i];
    zj[n] = project(x);
  }
  JointVarianceResult out;
  const double v0 = variance(z0);
  out.bias_only = variance(zb) - v0;
  out.scaling_only = variance(zs) - v0;
  out.joint = variance(zj) - v0;
  out.sum = out.bias_only + out.scaling_only;
  out.relative_error = relative_error(out.joint, out.sum, kRelativeErrorFloor);
  return out;
}

// ---------------------------------------------------------------------------
// Redistribution through the toy model

struct PerturbationSpec {
  double lambda = 1.0;      // scaling of the first-layer attention output
  double bias_sigma = 0.0;  // std of iid bounded uniform bias per element
};

struct RedistributionResult {
  ActivationMetrics before;
  ActivationMetrics after;  // averaged over trials
  Histogram hist_before;
  Histogram hist_after;     // pooled over trials
  std::size_t n_trials = 0;
};

// Applies out -> λ·out + bias to the layer-0 attention output (before the
// output projection) and compares layer-0 post-activation statistics.
inline RedistributionResult redistribution_experiment(const ModelWeights& w, const ModelConfig& cfg,
                                                      std::span<const TokenId> prompt, const PerturbationSpec& pert,
                                                      std::size_t n_trials, std::uint64_t seed, double q = 50.0,
                                                      std::size_t n_bins = 100) {
  if (n_trials < 1) throw ValueError("redistribution_experiment: need at least one trial");
  const ForwardTrace base = forward(prompt, w, cfg);
  const Tensor& act0 = base.layers.at(0).mlp_activation_pre_hook;

  std::vector<Tensor> after;
  const RngStream root(derive_seed(seed, stream::kTheory));
  const double half = pert.bias_sigma * std::sqrt(3.0);
  for (std::size_t t = 0; t < n_trials; ++t) {
    RngStream rng = root.substream(t);
    AttentionHookSpec hook{0, [&](const Tensor& a, const HookContext&) {
                             Tensor out = a;
                             for (auto& v : out.data()) {
                               const double b = half > 0.0 ? uniform<double>(rng, -half, half) : 0.0;
                               v = static_cast<float>(pert.lambda * static_cast<double>(v) + b);
                             }
                             return out;
                           }};
    ForwardOptions opt;
    opt.attention_hook = &hook;
    after.push_back(forward(prompt, w, cfg, opt).layers.at(0).mlp_activation_pre_hook);
  }

  double m = 0.0;
  for (float v : act0.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  for (const auto& a : after)
    for (float v : a.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  const HistogramSpec common{n_bins, HistRange::fixed, -m, m > 0.0 ? m : 1.0};

  RedistributionResult res;
  res.n_trials = n_trials;
  res.before = activation_metrics(act0.data(), act0.data(), q, common);
  res.hist_before = histogram(act0, common);
  res.hist_after.counts.assign(n_bins, 0);
  for (const auto& a : after) {
    const ActivationMetrics mt = activation_metrics(act0.data(), a.data(), q, common);
    res.after.relative_sparsity += mt.relative_sparsity / static_cast<double>(n_trials);
    res.after.l1 += mt.l1 / static_cast<double>(n_trials);
    res.after.l2 += mt.l2 / static_cast<double>(n_trials);
    res.after.gini += mt.gini / static_cast<double>(n_trials);
    res.after.tau = mt.tau;
    res.after.q = mt.q;
    const Histogram h = histogram(a, common);
    res.hist_after.edges = h.edges;
    for (std::size_t b = 0; b < n_bins; ++b) res.hist_after.counts[b] += h.counts[b];
  }
  return res;
}

// ---------------------------------------------------------------------------
// Report rows

struct CheckResult {
  std::string check_name;
  double predicted = 0.0;
  double empirical = 0.0;
  double rel_error = 0.0;
  double tol = 0.0;
  bool pass = false;
};

inline nlohmann::json to_json(const CheckResult& c) {
  return {{"check_name", c.check_name}, {"predicted", c.predicted}, {"empirical", c.empirical},
          {"rel_error", c.rel_error},   {"tol", c.tol},             {"pass", c.pass}};
}

}  // namespace armkit::theory
