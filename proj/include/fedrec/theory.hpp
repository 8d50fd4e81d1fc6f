/* Copyright 2026 The fedrec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedrec/discdiff.hpp"
#include "fedrec/numkit/rng.hpp"

// Synthetic instances on which the convergence and recovery bounds provably
// apply, plus the harnesses that measure against them.
namespace fedrec::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// F(θ) = ½(θ−θ*)ᵀA(θ−θ*) + F*, spec(A) ⊂ [μ, M].
struct QuadraticProblem {
  MatrixXd A;
  VectorXd theta_star;
  double f_star = 0.0;
  double mu = 1.0, M = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(theta_star.size()); }
  /// F(θ) − F*, computed without the cancellation of subtracting F*.
  double gap(const VectorXd& theta) const {
    if (dim() == 0) return 0.0;
    const VectorXd e = theta - theta_star;
    return 0.5 * e.dot(A * e);
  }
  double value(const VectorXd& theta) const { return gap(theta) + f_star; }
  VectorXd grad(const VectorXd& theta) const {
    if (dim() == 0) return VectorXd();
    return A * (theta - theta_star);
  }
};

/// Random orthogonal basis; eigenvalues uniform in [mu, M] with both ends present.
inline QuadraticProblem make_quadratic(std::size_t dim, double mu, double M, std::uint64_t seed) {
  if (!(mu > 0.0) || mu > M) throw std::invalid_argument("make_quadratic needs 0 < mu <= M");
  QuadraticProblem p;
  p.mu = mu;
  p.M = M;
  const auto n = static_cast<Eigen::Index>(dim);
  p.A = MatrixXd::Zero(n, n);
  p.theta_star = VectorXd::Zero(n);
  if (dim == 0) return p;
  numkit::Rng rng(seed);
  VectorXd eig(n);
  for (Eigen::Index i = 0; i < n; ++i) eig[i] = mu + (M - mu) * rng.uniform();
  eig[0] = M;
  if (n > 1) eig[1] = mu;
  MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd Q = qr.householderQ();
  p.A = Q * eig.asDiagonal() * Q.transpose();
  p.A = 0.5 * (p.A + p.A.transpose());
  for (Eigen::Index i = 0; i < n; ++i) p.theta_star[i] = rng.normal();
  p.f_star = rng.normal();
  return p;
}

/// Symbols of the appendix bounds in one place.
struct TheoryConstants {
  double eps_diff = 0.0;
  double L_dgn = 0.5, L_scn = 0.5;
  double delta_agg = 0.0;
  double sigma = 0.0;
  double C_cum = 0.0, eta_attn = 0.0;
  std::size_t T_rev = 0;
  double eta = 0.0;
  std::size_t E = 1, K = 1, T = 0, R = 0;

  double L_tot() const { return L_dgn + L_scn; }
};

/// One bound check, as reported by theory-check.
struct Verdict {
  std::string name;
  double bound = 0.0, measured = 0.0;
  std::size_t seeds = 0, violations = 0;
  bool pass = false;
  double margin() const { return bound - measured; }
};

inline nlohmann::json to_json(const Verdict& v) {
  return {{"theorem", v.name}, {"bound", v.bound},          {"measured", v.measured}, {"margin", v.margin()},
          {"seeds", v.seeds},  {"violations", v.violations}, {"pass", v.pass}};
}

// ---------------------------------------------------------------------------
// Alternating block descent

/// gap[r] = Q(θ^r, φ^r) − Q* for r = 0..R.
struct AlternatingTrace {
  std::vector<double> gap;
};

/// R alternations of an A-step on θ (φ frozen) then a B-step on φ (θ frozen).
/// `enforce = false` lets a negative control run with an oversized step.
inline AlternatingTrace run_alternating_freeze(const QuadraticProblem& F, const QuadraticProblem& G, double eta_A,
                                               double eta_B, std::size_t R, VectorXd theta, VectorXd phi,
                                               bool enforce = true) {
  if (enforce && (!(eta_A > 0.0) || !(eta_B > 0.0) || eta_A > 1.0 / F.M || (G.dim() > 0 && eta_B > 1.0 / G.M))) {
    throw std::invalid_argument("alternating freeze needs 0 < eta <= 1/M per block");
  }
  if (theta.size() != F.theta_star.size() || phi.size() != G.theta_star.size()) {
    throw std::invalid_argument("alternating freeze: start point has the wrong dimension");
  }
  AlternatingTrace tr;
  tr.gap.push_back(F.gap(theta) + G.gap(phi));
  for (std::size_t r = 0; r < R; ++r) {
    theta -= eta_A * F.grad(theta);
    if (G.dim() > 0) phi -= eta_B * G.grad(phi);
    tr.gap.push_back(F.gap(theta) + G.gap(phi));
  }
  return tr;
}

struct RateCheck {
  bool pass = true;
  double worst_ratio = 0.0;  // max over r >= 1 of gap_r / bound_r
  std::size_t violations = 0;
};

/// gap_r ≤ (1 − μ/M)^r gap_0 at every r. Roundoff allowance is 1e-14·gap_0.
inline RateCheck verify_theorem3(const AlternatingTrace& tr, double mu, double M) {
  RateCheck out;
  if (tr.gap.empty()) return out;
  const double g0 = tr.gap[0], rho = 1.0 - mu / M;
  const double slack = 1e-14 * g0;
  for (std::size_t r = 0; r < tr.gap.size(); ++r) {
    const double bound = std::pow(rho, static_cast<double>(r)) * g0;
    if (!(tr.gap[r] <= bound + slack)) {
      ++out.violations;
      out.pass = false;
    }
    const double ratio = bound + slack > 0.0 ? tr.gap[r] / (bound + slack) : 0.0;
    if (r == 0) continue;
    if (std::isnan(tr.gap[r]) || std::isinf(tr.gap[r])) out.worst_ratio = INFINITY;
    else out.worst_ratio = std::max(out.worst_ratio, ratio);
  }
  return out;
}

/// Both blocks with spectrum in [ratio·M, M], η = 1/M, start θ^0 ~ N(0, I).
inline Verdict theorem3_suite(const std::vector<double>& ratios, std::size_t dim, std::size_t seeds, std::size_t R,
                              std::uint64_t seed) {
  Verdict v;
  v.name = "alternating_freeze_linear_rate";
  v.pass = true;
  for (double ratio : ratios) {
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t base = numkit::derive_seed(numkit::derive_seed(seed, static_cast<std::uint64_t>(ratio * 1000)), s);
      const auto F = make_quadratic(dim, ratio, 1.0, numkit::derive_seed(base, 1));
      const auto G = make_quadratic(dim, ratio, 1.0, numkit::derive_seed(base, 2));
      numkit::Rng rng(numkit::derive_seed(base, 3));
      VectorXd th(static_cast<Eigen::Index>(dim)), ph(static_cast<Eigen::Index>(dim));
      for (auto& x : th) x = rng.normal();
      for (auto& x : ph) x = rng.normal();
      const auto tr = run_alternating_freeze(F, G, 1.0, 1.0, R, th, ph);
      const auto chk = verify_theorem3(tr, ratio, 1.0);
      v.violations += chk.violations;
      v.measured = std::max(v.measured, chk.worst_ratio);
      ++v.seeds;
    }
  }
  v.bound = 1.0;  // measured is the worst gap/bound ratio
  v.pass = v.violations == 0;
  return v;
}

// ---------------------------------------------------------------------------
// Recovery-only rounds on a FedAvg surrogate

struct FedAvgSurrogate {
  std::size_t n_clients = 5, K = 3, E = 1, T = 40;
  double eta = 0.0;  // 0 → 1/M
  double sigma = 0.0, delta_agg = 0.0, eps_diff = 0.0;
  double noise_multiplier = 1.0;  // >1 injects more noise than σ admits (negative control)
};

/// Final θ_g^T. Every client holds the same quadratic; each local step uses
/// ∇F + b + ξ with E‖ξ‖² = σ², ‖b‖ = ε_diff; the server averages K clients
/// sampled without replacement and adds a random perturbation of norm δ_agg.
inline VectorXd run_fedavg_surrogate(const QuadraticProblem& F, const FedAvgSurrogate& c, VectorXd theta_g,
                                     std::uint64_t seed) {
  if (c.K < 1 || c.K > c.n_clients) throw std::invalid_argument("fedavg surrogate needs 1 <= K <= n_clients");
  const double eta = c.eta > 0.0 ? c.eta : 1.0 / F.M;
  if (eta > 1.0 / F.M) throw std::invalid_argument("fedavg surrogate needs eta <= 1/M");
  const auto n = theta_g.size();
  numkit::Rng rng(seed);
  VectorXd bias = VectorXd::Zero(n);
  if (c.eps_diff > 0.0 && n > 0) {
    for (auto& x : bias) x = rng.normal();
    bias *= c.eps_diff / bias.norm();
  }
  const double sd = n > 0 ? c.noise_multiplier * c.sigma / std::sqrt(static_cast<double>(n)) : 0.0;
  std::vector<std::size_t> ids(c.n_clients);
  for (std::size_t t = 0; t < c.T; ++t) {
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    rng.shuffle(ids.begin(), ids.end());
    VectorXd sum = VectorXd::Zero(n);
    for (std::size_t k = 0; k < c.K; ++k) {
      VectorXd th = theta_g;
      for (std::size_t e = 0; e < c.E; ++e) {
        VectorXd g = F.grad(th) + bias;
        if (sd > 0.0)
          for (auto& x : g) x += sd * rng.normal();
        th -= eta * g;
      }
      sum += th;
    }
    theta_g = sum / static_cast<double>(c.K);
    if (c.delta_agg > 0.0 && n > 0) {
      VectorXd dir(n);
      for (auto& x : dir) x = rng.normal();
      theta_g += c.delta_agg / dir.norm() * dir;
    }
  }
  return theta_g;
}

/// M‖θ0−θ*‖²/(2ηT) + ηEσ²/(Kμ) + Mδ² + ε²/μ, as printed.
inline double theorem1_rhs(const QuadraticProblem& F, const FedAvgSurrogate& c, const VectorXd& theta0) {
  const double eta = c.eta > 0.0 ? c.eta : 1.0 / F.M;
  const double d0 = (theta0 - F.theta_star).squaredNorm();
  return F.M * d0 / (2.0 * eta * static_cast<double>(c.T)) +
         eta * static_cast<double>(c.E) * c.sigma * c.sigma / (static_cast<double>(c.K) * F.mu) +
         F.M * c.delta_agg * c.delta_agg + c.eps_diff * c.eps_diff / F.mu;
}

struct Theorem1Result {
  double mean_gap = 0.0, rhs = 0.0;
  std::vector<double> gaps;
  bool pass = false;
};

/// Mean over seeds of F(θ_g^T) − F* against the bound, from θ_g^0 = 0.
inline Theorem1Result verify_theorem1(const QuadraticProblem& F, const FedAvgSurrogate& c, std::size_t seeds,
                                      std::uint64_t seed) {
  Theorem1Result r;
  const VectorXd theta0 = VectorXd::Zero(F.theta_star.size());
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto th = run_fedavg_surrogate(F, c, theta0, numkit::derive_seed(seed, s));
    r.gaps.push_back(F.gap(th));
    r.mean_gap += r.gaps.back();
  }
  r.mean_gap /= static_cast<double>(std::max<std::size_t>(seeds, 1));
  r.rhs = theorem1_rhs(F, c, theta0);
  r.pass = r.mean_gap <= r.rhs;
  return r;
}

/// Grid over K ∈ {1,3}, E ∈ {1,3} and two conditioning ratios.
inline Verdict theorem1_suite(std::size_t seeds, std::uint64_t seed, double sigma = 0.5, double delta_agg = 0.05,
                              double eps_diff = 0.1) {
  Verdict v;
  v.name = "recovery_round_convergence";
  double worst = 0.0;
  for (double ratio : {0.1, 0.5}) {
    const auto F = make_quadratic(10, ratio, 1.0, numkit::derive_seed(seed, static_cast<std::uint64_t>(ratio * 1000)));
    for (std::size_t K : {1u, 3u})
      for (std::size_t E : {1u, 3u}) {
        FedAvgSurrogate c;
        c.K = K;
        c.E = E;
        c.sigma = sigma;
        c.delta_agg = delta_agg;
        c.eps_diff = eps_diff;
        const auto r = verify_theorem1(F, c, seeds, numkit::derive_seed(seed, K * 10 + E));
        if (!r.pass) ++v.violations;
        v.seeds += seeds;
        if (r.mean_gap / r.rhs >= worst) {
          worst = r.mean_gap / r.rhs;
          v.measured = r.mean_gap;
          v.bound = r.rhs;
        }
      }
  }
  v.pass = v.violations == 0;
  return v;
}

// ---------------------------------------------------------------------------
// Recovered-latent error under predictor noise

/// ε*(z_t, t) = (z_t − √ᾱ_t z0)/√(1−ᾱ_t): the exact noise for a single target.
inline diff::NoisePredictor analytic_predictor(const numkit::Tensor& z0, const diff::NoiseSchedule& s) {
  return [z0, &s](const numkit::Tensor& z, std::size_t t) {
    numkit::Tensor e = z;
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z[i] - a * z0[i]) / b;
    return e;
  };
}

/// Σ C_t over the sampled reverse steps, C_t = (1−α_t)/(√α_t √(1−ᾱ_t)) with
/// α_t = ᾱ_t/ᾱ_prev the per-step factor of the (respaced) chain.
inline double cumulative_coefficient(const diff::NoiseSchedule& s, std::size_t steps) {
  const auto ts = diff::ddim_timesteps(s.T, steps);
  double sum = 0.0;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::size_t t = ts[k], tp = k + 1 < ts.size() ? ts[k + 1] : 0;
    const double a = s.alpha_bar[t] / s.alpha_bar[tp];
    sum += (1.0 - a) / (std::sqrt(a) * std::sqrt(1.0 - s.alpha_bar[t]));
  }
  return sum;
}

struct Theorem2Config {
  std::size_t dim = 16, T = 1000, steps = 50, trials = 64;
  std::vector<double> levels{0.05, 0.1, 0.2};
  double L_tot = 1.0;
};

struct Theorem2Result {
  double exact_error = 0.0;  // max error with the noiseless predictor
  double eta_attn = 0.0;     // median noiseless error
  double C_cum = 0.0;
  std::vector<double> medians, bounds;
  bool exact_ok = false, monotone = false, below_bound = false;
  bool pass() const { return exact_ok && monotone && below_bound; }
};

/// Noise of per-coordinate std ε/√dim is added to every prediction, so
/// E‖ε_θ − ε‖² = ε² and ε plays ε_diff.
inline Theorem2Result measure_theorem2(const Theorem2Config& c, std::uint64_t seed) {
  if (c.trials < 1) throw std::invalid_argument("theorem 2 harness needs at least one trial");
  const auto s = diff::NoiseSchedule::linear(c.T);
  Theorem2Result r;
  r.C_cum = cumulative_coefficient(s, c.steps);
  auto run_level = [&](double eps, std::uint64_t tag, double* worst) {
    std::vector<double> err;
    for (std::size_t i = 0; i < c.trials; ++i) {
      numkit::Rng rng(numkit::derive_seed(numkit::derive_seed(seed, tag), i));
      const numkit::Tensor z0 = rng.normal_tensor({1u, c.dim});
      const numkit::Tensor zT = rng.normal_tensor({1u, c.dim});
      const auto exact = analytic_predictor(z0, s);
      const double sd = eps / std::sqrt(static_cast<double>(c.dim));
      diff::NoisePredictor noisy = [&](const numkit::Tensor& z, std::size_t t) {
        numkit::Tensor e = exact(z, t);
        if (sd > 0.0)
          for (double& x : e.data()) x += sd * rng.normal();
        return e;
      };
      const auto out = diff::ddim_sample(noisy, zT, s, c.steps);
      double d2 = 0.0;
      for (std::size_t j = 0; j < c.dim; ++j) d2 += (out[j] - z0[j]) * (out[j] - z0[j]);
      err.push_back(std::sqrt(d2));
      if (worst) *worst = std::max(*worst, err.back());
    }
    std::sort(err.begin(), err.end());
    const std::size_t n = err.size();
    return n % 2 ? err[n / 2] : 0.5 * (err[n / 2 - 1] + err[n / 2]);
  };
  r.eta_attn = run_level(0.0, 0, &r.exact_error);
  r.exact_ok = r.exact_error <= 1e-3;
  r.monotone = true;
  r.below_bound = true;
  for (std::size_t k = 0; k < c.levels.size(); ++k) {
    r.medians.push_back(run_level(c.levels[k], k + 1, nullptr));
    r.bounds.push_back(r.C_cum * c.L_tot * c.levels[k] + r.eta_attn);
    if (k > 0 && r.medians[k] < r.medians[k - 1]) r.monotone = false;
    if (!(r.medians[k] <= r.bounds[k])) r.below_bound = false;
  }
  return r;
}

inline Verdict theorem2_verdict(const Theorem2Result& r, std::size_t trials) {
  Verdict v;
  v.name = "recovered_latent_error";
  v.seeds = trials;
  // the tightest level
  double worst = -1.0;
  for (std::size_t k = 0; k < r.medians.size(); ++k) {
    if (r.medians[k] / r.bounds[k] > worst) {
      worst = r.medians[k] / r.bounds[k];
      v.measured = r.medians[k];
      v.bound = r.bounds[k];
    }
  }
  v.violations = (r.exact_ok ? 0 : 1) + (r.monotone ? 0 : 1) + (r.below_bound ? 0 : 1);
  v.pass = r.pass();
  return v;
}

}  // namespace fedrec::theory
