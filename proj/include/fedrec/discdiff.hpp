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

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrec/modality.hpp"
#include "fedrec/nn.hpp"
#include "fedrec/numkit/optim.hpp"
#include "fedrec/numkit/rng.hpp"
#include "fedrec/numkit/tape.hpp"

namespace fedrec::diff {

using numkit::Bound;
using numkit::ParameterSet;
using numkit::Tensor;
using numkit::Var;

/// β/α/ᾱ/β̃ indexed 0..T with ᾱ_0 = 1; index 0 of β, α, β̃ is unused.
struct NoiseSchedule {
  std::size_t T = 0;
  std::vector<double> beta, alpha, alpha_bar, beta_tilde;

  static NoiseSchedule linear(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T < 1) throw std::invalid_argument("noise schedule needs T >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
      throw std::invalid_argument("noise schedule needs 0 < beta_start <= beta_end < 1");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha.assign(T + 1, 1.0);
    s.alpha_bar.assign(T + 1, 1.0);
    s.beta_tilde.assign(T + 1, 0.0);
    for (std::size_t t = 1; t <= T; ++t) {
      const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
      s.beta[t] = beta_start + (beta_end - beta_start) * frac;
      s.alpha[t] = 1.0 - s.beta[t];
      s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
      s.beta_tilde[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    }
    return s;
  }

  void check_step(std::size_t t) const {
    if (t < 1 || t > T) throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
  }
};

/// Strided DDIM grid over a T-step schedule: {T, T-k, ..., k} for k = T/steps.
inline std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps) {
  if (steps < 1 || steps > T) throw std::invalid_argument("ddim steps must lie in [1, T]");
  std::vector<std::size_t> ts;
  for (std::size_t k = steps; k >= 1; --k) ts.push_back((k * T) / steps);
  return ts;
}

/// z_t = √ᾱ_t z0 + √(1−ᾱ_t) ε
inline Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const NoiseSchedule& s) {
  s.check_step(t);
  if (z0.shape() != eps.shape()) throw numkit::ShapeError("q_sample: noise shape differs from z0");
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  Tensor z = z0;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * z0[i] + b * eps[i];
  return z;
}

/// ε̂ = (1+w)·ε_c − w·ε_u, evaluated as ε_c + w·(ε_c − ε_u) so that w = 0 and
/// ε_c = ε_u return ε_c bit for bit.
inline Tensor guided_noise(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  if (w < 0.0) throw std::invalid_argument("guidance weight must be nonnegative");
  Tensor out = eps_cond;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps_cond[i] + w * (eps_cond[i] - eps_uncond[i]);
  return out;
}

/// μ̃ = (z_t − (1−α_t)/√(1−ᾱ_t)·ε̂)/√α_t, plus √β̃_t·ξ except at t = 1.
inline Tensor ddpm_step(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, const NoiseSchedule& s,
                        numkit::Rng& rng) {
  s.check_step(t);
  const double coef = (1.0 - s.alpha[t]) / std::sqrt(1.0 - s.alpha_bar[t]);
  const double inv = 1.0 / std::sqrt(s.alpha[t]);
  const double sd = t > 1 ? std::sqrt(s.beta_tilde[t]) : 0.0;
  Tensor z = z_t;
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = inv * (z_t[i] - coef * eps_hat[i]);
    if (sd > 0.0) z[i] += sd * rng.normal();
  }
  return z;
}

/// Deterministic DDIM update (η = 0) from t to t_prev < t; t_prev = 0 returns ẑ0.
inline Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, std::size_t t, std::size_t t_prev,
                        const NoiseSchedule& s) {
  s.check_step(t);
  if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be smaller than t");
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t_prev];
  const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
  const double sa_prev = std::sqrt(ab_prev), sn_prev = std::sqrt(1.0 - ab_prev);
  Tensor z = z_t;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double z0 = (z_t[i] - sn * eps_hat[i]) / sa;
    z[i] = sa_prev * z0 + sn_prev * eps_hat[i];
  }
  return z;
}

/// Returns ε̂ for the current iterate at timestep t.
using NoisePredictor = std::function<Tensor(const Tensor& z_t, std::size_t t)>;

inline Tensor ddim_sample(const NoisePredictor& predict, Tensor z, const NoiseSchedule& s, std::size_t steps) {
  const auto ts = ddim_timesteps(s.T, steps);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::size_t t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
    z = ddim_step(z, predict(z, ts[k]), ts[k], t_prev, s);
  }
  return z;
}

inline Tensor ddpm_sample(const NoisePredictor& predict, Tensor z, const NoiseSchedule& s, numkit::Rng& rng) {
  for (std::size_t t = s.T; t >= 1; --t) z = ddpm_step(z, predict(z, t), t, s, rng);
  return z;
}

// ---------------------------------------------------------------------------
// Conditional noise predictor

inline std::string prefix(Modality m) { return std::string("diff.") + modality_key(m) + "."; }

inline constexpr std::size_t kResidualBlocks = 3;
inline constexpr std::size_t kTimeTableWidth = 32;  // frozen sinusoidal table, projected to p_tok

inline ParameterSet init_diffusion_params(Modality m, const nn::ModelDims& dims, numkit::Rng& rng) {
  dims.validate();
  const std::string pre = prefix(m);
  const std::size_t p = dims.p_tok;
  ParameterSet ps;
  nn::add_linear(ps, pre + "cond", dims.condition_width(), dims.s_tok * p, rng);
  ps.add(pre + "null", rng.normal_tensor({dims.s_tok, p}));
  nn::add_linear(ps, pre + "time", kTimeTableWidth, p, rng);
  nn::add_linear(ps, pre + "in", dims.d, dims.d, rng);
  for (std::size_t k = 0; k < kResidualBlocks; ++k) {
    const std::string b = pre + "b" + std::to_string(k) + ".";
    nn::add_linear(ps, b + "tok", p, p, rng);
    nn::add_attention(ps, b + "attn", p, rng);
    nn::add_linear(ps, b + "fuse", 2 * p, p, rng, 0.5);
    nn::add_linear(ps, b + "mix", dims.d, dims.d, rng, 0.5);
  }
  nn::add_linear(ps, pre + "out", dims.d, dims.d, rng, 0.5);
  return ps;
}

/// Sinusoidal embedding of integer timesteps, one row per sample.
inline Tensor time_embedding(const std::vector<std::size_t>& t, std::size_t width) {
  Tensor e = Tensor::matrix(t.size(), width);
  const std::size_t half = width / 2;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      e(i, k) = std::sin(static_cast<double>(t[i]) * freq);
      e(i, half + k) = std::cos(static_cast<double>(t[i]) * freq);
    }
  return e;
}

/// c = Reshape(Linear(z^D ‖ z^S)): (N × 2(3d+3)) → (N·s × p).
inline Var build_condition(const Bound& p, Modality m, const nn::ModelDims& dims, Var z_cond) {
  if (z_cond.cols() != dims.condition_width()) {
    throw numkit::ShapeError("build_condition: expected width " + std::to_string(dims.condition_width()) + ", got " +
                             std::to_string(z_cond.cols()));
  }
  Var c = nn::linear(p, prefix(m) + "cond", z_cond);
  return numkit::reshape(c, {z_cond.rows() * dims.s_tok, dims.p_tok});
}

/// Learned null condition tiled over N samples.
inline Var null_condition(const Bound& p, Modality m, const nn::ModelDims& dims, std::size_t n) {
  return numkit::gather_rows(p[prefix(m) + "null"], nn::tile_index(dims.s_tok, n));
}

/// Per-sample choice between the built condition (keep = 1) and the null tokens (keep = 0).
inline Var mix_condition(const Bound& p, Modality m, const nn::ModelDims& dims, Var cond,
                         const std::vector<double>& keep) {
  const std::size_t n = keep.size();
  std::vector<double> k_rows, n_rows;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dims.s_tok; ++j) {
      k_rows.push_back(keep[i]);
      n_rows.push_back(1.0 - keep[i]);
    }
  return numkit::add(numkit::scale_rows(cond, std::move(k_rows)),
                     numkit::scale_rows(null_condition(p, m, dims, n), std::move(n_rows)));
}

/// ε_θ(z_t, t, c): z_t is (N × d), cond_tokens is (N·s × p); returns (N × d).
inline Var predict_noise(const Bound& p, Modality m, const nn::ModelDims& dims, Var z_t,
                         const std::vector<std::size_t>& t, Var cond_tokens, const NoiseSchedule& sched) {
  using namespace numkit;
  const std::string pre = prefix(m);
  const std::size_t n = z_t.rows();
  if (t.size() != n) throw ShapeError("predict_noise: one timestep per sample is required");
  if (z_t.cols() != dims.d) throw ShapeError("predict_noise: latent width differs from d");
  Tape& tape = *z_t.tape;
  Var temb = nn::linear(p, pre + "time", tape.constant(time_embedding(t, kTimeTableWidth)));
  temb = gather_rows(temb, nn::repeat_index(n, dims.s_tok));
  const Shape tokens{n * dims.s_tok, dims.p_tok}, flat{n, dims.d};
  Var f = reshape(nn::linear(p, pre + "in", z_t), tokens);
  for (std::size_t k = 0; k < kResidualBlocks; ++k) {
    const std::string b = pre + "b" + std::to_string(k) + ".";
    Var u = relu(add(nn::linear(p, b + "tok", f), temb));
    Var a = nn::attention(p, b + "attn", u, cond_tokens, n);
    f = add(f, nn::linear(p, b + "fuse", concat_cols({u, a})));
    f = add(f, reshape(nn::linear(p, b + "mix", relu(reshape(f, flat))), tokens));
  }
  // skip term √(1−ᾱ_t)·z_t is the exact predictor for unit-Gaussian data; the network learns the rest
  std::vector<double> skip(n);
  for (std::size_t i = 0; i < n; ++i) {
    sched.check_step(t[i]);
    skip[i] = std::sqrt(1.0 - sched.alpha_bar[t[i]]);
  }
  return add(scale_rows(z_t, std::move(skip)), nn::linear(p, pre + "out", reshape(f, flat)));
}

// ---------------------------------------------------------------------------
// Training

struct DiffusionConfig {
  std::size_t t_train = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double p_drop = 0.1;
  double train_w = 0.0;  // guidance weight inside the training objective; 0 = plain noise matching
  std::size_t batch = 32;
  double lr = 2e-3;
};

/// Samples for one modality: targets z0 plus the frozen condition rows.
struct DiffusionData {
  Tensor z0;                    // (N × d)
  Tensor cond;                  // (N × 2(3d+3))
  std::vector<bool> has_cond;   // false → condition set is empty, null token always

  std::size_t size() const { return has_cond.size(); }
};

struct StepResult {
  double loss = 0.0;
  ParameterSet grads;
};

/// One noise-matching step on rows `idx` of `data`.
inline StepResult diffusion_train_step(const ParameterSet& params, Modality m, const nn::ModelDims& dims,
                                       const DiffusionData& data, const std::vector<std::size_t>& idx,
                                       const DiffusionConfig& cfg, const NoiseSchedule& sched, numkit::Rng& rng) {
  using namespace numkit;
  if (idx.empty()) throw std::invalid_argument("diffusion_train_step: empty batch");
  if (cfg.p_drop < 0.0 || cfg.p_drop >= 1.0) throw std::invalid_argument("p_drop must lie in [0, 1)");
  const std::size_t n = idx.size(), d = dims.d, cw = dims.condition_width();
  Tensor zt = Tensor::matrix(n, d), eps = Tensor::matrix(n, d), zc = Tensor::matrix(n, cw);
  std::vector<std::size_t> t(n);
  std::vector<double> keep(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = idx[r];
    t[r] = rng.uniform_int(1, sched.T);
    const double a = std::sqrt(sched.alpha_bar[t[r]]), b = std::sqrt(1.0 - sched.alpha_bar[t[r]]);
    for (std::size_t k = 0; k < d; ++k) {
      eps(r, k) = rng.normal();
      zt(r, k) = a * data.z0(i, k) + b * eps(r, k);
    }
    const bool dropped = rng.bernoulli(cfg.p_drop);
    keep[r] = data.has_cond[i] && !dropped ? 1.0 : 0.0;
    for (std::size_t k = 0; k < cw; ++k) zc(r, k) = data.cond(i, k);
  }
  Tape tape;
  Bound bp(tape, params);
  Var ztv = tape.constant(std::move(zt));
  Var c = mix_condition(bp, m, dims, build_condition(bp, m, dims, tape.constant(std::move(zc))), keep);
  Var eps_hat = predict_noise(bp, m, dims, ztv, t, c, sched);
  if (cfg.train_w != 0.0) {
    Var eps_u = predict_noise(bp, m, dims, ztv, t, null_condition(bp, m, dims, n), sched);
    eps_hat = sub(scale(eps_hat, 1.0 + cfg.train_w), scale(eps_u, cfg.train_w));
  }
  Var loss = squared_norm(sub(tape.constant(std::move(eps)), eps_hat), static_cast<double>(n));
  StepResult out;
  out.loss = loss.value()[0];
  if (!std::isfinite(out.loss)) throw NumericalError("diffusion loss is not finite");
  tape.backward(loss);
  out.grads = bp.gradients();
  return out;
}

/// `epochs` passes over the data in shuffled minibatches with a fresh Adam state.
/// Returns the mean loss of the last epoch.
inline double train_diffusion(ParameterSet& params, Modality m, const nn::ModelDims& dims, const DiffusionData& data,
                              std::size_t epochs, const DiffusionConfig& cfg, const NoiseSchedule& sched,
                              numkit::Rng& rng) {
  if (data.size() == 0 || epochs == 0) return 0.0;
  numkit::Adam opt({cfg.lr});
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double last = 0.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + cfg.batch)));
      StepResult r = diffusion_train_step(params, m, dims, data, idx, cfg, sched, rng);
      opt.step(params, r.grads);
      total += r.loss;
      ++batches;
    }
    last = total / static_cast<double>(batches);
  }
  if (!params.all_finite()) throw numkit::NumericalError("diffusion parameters became non-finite");
  return last;
}

// ---------------------------------------------------------------------------
// Sampling with a trained model

enum class SamplerKind { kDdim, kDdpm };

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kDdim;
  std::size_t timesteps = 50;  // reverse steps actually taken
  double guidance_w = 1.0;
  bool conditional = true;  // false → every sample uses the null condition
};

/// Guided predictor over a fixed batch of conditions (inference tape, no gradients).
inline NoisePredictor guided_predictor(const ParameterSet& params, Modality m, const nn::ModelDims& dims,
                                       const Tensor& cond, const std::vector<bool>& has_cond, double w, bool conditional,
                                       const NoiseSchedule& sched) {
  return [&params, &sched, m, dims, cond, has_cond, w, conditional](const Tensor& z, std::size_t t) {
    const std::size_t n = z.rows();
    std::vector<double> keep(n);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      keep[i] = conditional && has_cond[i] ? 1.0 : 0.0;
      any = any || keep[i] != 0.0;
    }
    numkit::Tape tape(false);
    Bound bp(tape, params);
    std::vector<std::size_t> ts(n, t);
    Var zv = tape.constant(z);
    auto uncond = [&] { return Tensor(predict_noise(bp, m, dims, zv, ts, null_condition(bp, m, dims, n), sched).value()); };
    if (!any) return uncond();
    Var c = mix_condition(bp, m, dims, build_condition(bp, m, dims, tape.constant(cond)), keep);
    Tensor eps_c = predict_noise(bp, m, dims, zv, ts, c, sched).value();
    if (w == 0.0) return eps_c;
    return guided_noise(eps_c, uncond(), w);
  };
}

/// Draws latents for every condition row from z_T ~ N(0, I).
inline Tensor sample_latents(const ParameterSet& params, Modality m, const nn::ModelDims& dims, const Tensor& cond,
                             const std::vector<bool>& has_cond, const SamplerConfig& sc, const NoiseSchedule& sched,
                             numkit::Rng& rng) {
  const std::size_t n = has_cond.size();
  Tensor z = rng.normal_tensor({n, dims.d});
  auto predict = guided_predictor(params, m, dims, cond, has_cond, sc.guidance_w, sc.conditional, sched);
  if (sc.kind == SamplerKind::kDdim) return ddim_sample(predict, std::move(z), sched, sc.timesteps);
  return ddpm_sample(predict, std::move(z), sched, rng);
}

}  // namespace fedrec::diff
