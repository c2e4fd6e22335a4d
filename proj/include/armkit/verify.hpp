#pragma once

// The theory check suite behind `armkit verify-theory`. Every check reports
// {predicted, empirical, rel_error, tol} and passes iff rel_error < tol.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "armkit/activation.hpp"
#include "armkit/rng.hpp"
#include "armkit/theory.hpp"

namespace armkit::theory {

struct TheoryOptions {
  std::uint64_t seed = 7;
  std::size_t n_samples = 1'000'000;
  std::size_t threads = 1;
  std::optional<double> tol_override;
};

// Default tolerances.
namespace tol {
inline constexpr double kJacobianAbs = 1e-6;
inline constexpr double kLinearExact = 1e-9;
inline constexpr double kHalvingRatio = 0.6;  // error(Δλ/2) / error(Δλ); first-order decay tends to 0.5
inline constexpr double kBiasRelative = 0.05;
inline constexpr double kVarianceRatio = 0.1;  // |empirical/predicted - 1|
inline constexpr double kMeanBeatsZeroth = 1.0;  // |err 2nd order| / |err 0th order|
inline constexpr double kTwoScaleSlack = 0.05;
inline constexpr double kJoint = 0.1;
inline constexpr double kFormula = 1e-12;
}  // namespace tol

inline constexpr double kTaylorHalfWidth = 0.01;
inline const std::vector<double> kTaylorMus = {-1.0, -0.3, 0.0, 0.3, 1.0};

// Synthetic residual/direction samples around fixed centers.
inline ScalingSystem make_scaling_system(std::size_t n, std::size_t d, std::uint64_t seed, bool linear = false) {
  RngStream rng(derive_seed(seed, stream::kData));
  ScalingSystem sys;
  sys.linear = linear;
  sys.eps = 1e-6;
  sys.residual = Tensor64({n, d});
  sys.direction = Tensor64({n, d});
  Vec r0(d), a0(d);
  for (auto& v : r0) v = normal(rng);
  for (auto& v : a0) v = normal(rng);
  sys.gamma.resize(d);
  sys.gate_row.resize(d);
  for (auto& v : sys.gamma) v = 1.0 + 0.1 * normal(rng);
  for (auto& v : sys.gate_row) v = normal(rng);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) {
      sys.residual(s, i) = r0[i] + 0.3 * normal(rng);
      sys.direction(s, i) = a0[i] + 0.3 * normal(rng);
    }
  }
  return sys;
}

struct CheckBuilder {
  const TheoryOptions& opt;
  std::vector<CheckResult> out;

  void add(std::string name, double predicted, double empirical, double err, double default_tol) {
    const double t = opt.tol_override.value_or(default_tol);
    const bool finite = std::isfinite(err) && std::isfinite(predicted) && std::isfinite(empirical);
    out.push_back({std::move(name), predicted, empirical, err, t, finite && err < t});
  }
};

inline std::vector<CheckResult> verify_theory(const TheoryOptions& opt) {
  CheckBuilder cb{opt, {}};
  RngStream rng(derive_seed(opt.seed, stream::kData) ^ 0x1ACull);

  // RMSNorm Jacobian vs central differences at 100 random points.
  {
    double worst = 0.0;
    double worst_a = 0.0, worst_n = 0.0;
    for (int t = 0; t < 100; ++t) {
      const std::size_t d = 2 + static_cast<std::size_t>(rng.next_u64() % 15);
      Vec x(d), g(d);
      for (auto& v : x) v = normal(rng);
      for (auto& v : g) v = 0.5 + rng.next_unit();
      const JacobianCheck c = check_rmsnorm_jacobian(x, g, 1e-6);
      if (c.max_abs_error >= worst) {
        worst = c.max_abs_error;
        for (std::size_t i = 0; i < c.analytic.size(); ++i) {
          if (std::abs(c.analytic[i] - c.numeric[i]) == c.max_abs_error) {
            worst_a = c.analytic[i];
            worst_n = c.numeric[i];
          }
        }
      }
    }
    cb.add("rmsnorm_jacobian_max_abs", worst_a, worst_n, worst, tol::kJacobianAbs);
  }

  // Scaling: exact on the linear system.
  {
    const ScalingSystem lin = make_scaling_system(opt.n_samples, 8, opt.seed, /*linear=*/true);
    const VarianceReport r = variance_change_scaling(lin, 1.0, 0.2, opt.threads);
    cb.add("scaling_linear_exact", r.predicted, r.empirical, r.relative_error, tol::kLinearExact);
  }

  // Scaling through rmsnorm: relative error decays at first order in Δλ.
  {
    const ScalingSystem sys = make_scaling_system(opt.n_samples, 8, opt.seed);
    double dl = 0.1;
    VarianceReport prev = variance_change_scaling(sys, 1.0, dl, opt.threads);
    cb.add("scaling_rmsnorm_dlambda_0.1", prev.predicted, prev.empirical, prev.relative_error, 1.0);
    for (int h = 1; h <= 3; ++h) {
      dl /= 2.0;
      const VarianceReport cur = variance_change_scaling(sys, 1.0, dl, opt.threads);
      cb.add("scaling_rmsnorm_halving_" + std::to_string(h), prev.relative_error, cur.relative_error,
             cur.relative_error / prev.relative_error, tol::kHalvingRatio);
      prev = cur;
    }
    const VarianceReport zero = variance_change_scaling(sys, 1.0, 0.0, opt.threads);
    cb.add("scaling_zero_dlambda", zero.predicted, zero.empirical, std::abs(zero.predicted - zero.empirical),
           tol::kFormula);
  }

  // Bias through rmsnorm at small isotropic noise.
  {
    const std::size_t d = 8, m = 4;
    Vec x0(d), g(d), w(d);
    for (auto& v : x0) v = normal(rng);
    for (auto& v : g) v = 0.5 + rng.next_unit();
    for (auto& v : w) v = normal(rng);
    Tensor64 W({d, m});
    for (auto& v : W.data()) v = normal(rng);
    const VarianceReport r =
        variance_change_bias(x0, W, isotropic_covariance(m, 1e-6), g, 1e-6, w, opt.n_samples, opt.seed, opt.threads);
    cb.add("bias_isotropic_sigma_1e-3", r.predicted, r.empirical, r.relative_error, tol::kBiasRelative);
  }

  // Taylor moments of the activation output.
  for (Activation phi : {Activation::silu, Activation::gelu}) {
    const std::string name(to_string(phi));
    const double var = uniform_variance(kTaylorHalfWidth);
    for (double mu : kTaylorMus) {
      const MomentPrediction p = taylor_moments(phi, mu, var);
      const MomentEstimate e = sample_moments_uniform(phi, mu, kTaylorHalfWidth, opt.n_samples, opt.seed);
      char tag[32];
      std::snprintf(tag, sizeof tag, "%+.1f", mu);
      cb.add("taylor_var_ratio_" + name + "_mu" + tag, p.var, e.var, std::abs(e.var / p.var - 1.0),
             tol::kVarianceRatio);
      if (activate_d2(mu, phi) != 0.0) {
        const double err2 = std::abs(e.mean - p.mean);
        const double err0 = std::abs(e.mean - activate(mu, phi));
        cb.add("taylor_mean_beats_zeroth_" + name + "_mu" + tag, p.mean, e.mean, err2 / err0, tol::kMeanBeatsZeroth);
      }
    }
    // Higher-order decay: halving the noise width cuts the mean error by >= 4x.
    const double mu = 0.3;
    const MomentEstimate e1 = sample_moments_uniform(phi, mu, kTaylorHalfWidth, opt.n_samples, opt.seed);
    const MomentEstimate e2 = sample_moments_uniform(phi, mu, kTaylorHalfWidth / 2, opt.n_samples, opt.seed);
    const double err1 = std::abs(e1.mean - taylor_moments(phi, mu, uniform_variance(kTaylorHalfWidth)).mean);
    const double err2 = std::abs(e2.mean - taylor_moments(phi, mu, uniform_variance(kTaylorHalfWidth / 2)).mean);
    cb.add("taylor_two_scale_decay_" + name, err1, err2, err2 / err1, 0.25 + tol::kTwoScaleSlack);
  }

  // Bias and scaling components add up.
  {
    const std::size_t d = 8, m = 4;
    const ScalingSystem sys = make_scaling_system(opt.n_samples, d, opt.seed ^ 0xB1A5ull);
    Tensor64 W({d, m});
    for (auto& v : W.data()) v = normal(rng);
    // λ: 1 -> 0.95 (attention mass drop) with bias std ~0.03
    const JointVarianceResult j =
        joint_variance_experiment(sys, 1.0, -0.05, W, isotropic_covariance(m, 1e-3), opt.seed);
    cb.add("combined_variance_additivity", combined_variance(std::max(j.bias_only, 0.0), std::max(j.scaling_only, 0.0)),
           j.joint, j.relative_error, tol::kJoint);
  }

  // Admissible Δλ interval formula.
  {
    const Interval iv = admissible_dlambda(0.1, 1.0, 1.0);
    cb.add("admissible_interval_formula", 3.2, iv.lo + iv.hi, std::abs(iv.lo + iv.hi - 3.2), tol::kFormula);
  }
  return cb.out;
}

}  // namespace armkit::theory
