#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fedrec/discdiff.hpp"
#include "fedrec/numkit/gradcheck.hpp"
#include "test_util.hpp"

using namespace fedrec;
using namespace fedrec::diff;
using numkit::Bound;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

namespace {

// ε_θ for a dataset holding the single point z0: exact inverse of q_sample.
NoisePredictor analytic_predictor(const Tensor& z0, const NoiseSchedule& s) {
  return [z0, &s](const Tensor& z, std::size_t t) {
    Tensor e = z;
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = (z[i] - a * z0[i]) / b;
    return e;
  };
}

void zero_all(ParameterSet& p) {
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i).fill(0.0);
}

}  // namespace

TEST(NoiseSchedule, Identities) {
  const auto s = NoiseSchedule::linear(1000);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  EXPECT_DOUBLE_EQ(s.beta[1], 1e-4);
  EXPECT_DOUBLE_EQ(s.beta[1000], 0.02);
  for (std::size_t t = 1; t <= s.T; ++t) {
    EXPECT_GT(s.beta[t], 0.0);
    EXPECT_LT(s.beta[t], 1.0);
    EXPECT_EQ(s.alpha[t], 1.0 - s.beta[t]);
    EXPECT_EQ(s.alpha_bar[t], s.alpha_bar[t - 1] * s.alpha[t]);
    EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    EXPECT_DOUBLE_EQ(s.beta_tilde[t], (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t]);
  }
  EXPECT_EQ(s.beta_tilde[1], 0.0);
  EXPECT_THROW(NoiseSchedule::linear(0), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.5, 0.1), std::invalid_argument);
}

TEST(DdimGrid, UniformStride) {
  EXPECT_EQ(ddim_timesteps(1000, 4), (std::vector<std::size_t>{1000, 750, 500, 250}));
  EXPECT_EQ(ddim_timesteps(50, 50).back(), 1u);
  EXPECT_THROW(ddim_timesteps(50, 51), std::invalid_argument);
}

TEST(QSample, ClosedForm) {
  const auto s = NoiseSchedule::linear(1000);
  numkit::Rng rng(1);
  Tensor z0 = rng.normal_tensor({3u, 4u});
  Tensor zero = Tensor::matrix(3, 4);
  Tensor z = q_sample(z0, 10, zero, s);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_DOUBLE_EQ(z[i], std::sqrt(s.alpha_bar[10]) * z0[i]);
  Tensor eps = rng.normal_tensor({3u, 4u});
  EXPECT_LT(numkit::max_abs_diff(q_sample(z0, 1000, eps, s), eps), 0.01 * 5);
  EXPECT_THROW(q_sample(z0, 0, eps, s), std::out_of_range);
  EXPECT_THROW(q_sample(z0, 1001, eps, s), std::out_of_range);
  EXPECT_THROW(q_sample(z0, 5, Tensor::matrix(2, 4), s), numkit::ShapeError);
}

TEST(QSample, MonteCarloMomentsWithinThreeStandardErrors) {
  const auto s = NoiseSchedule::linear(1000);
  numkit::Rng rng(2);
  const std::size_t n = 100000;
  Tensor z0 = Tensor::matrix(1, 1);
  z0[0] = 1.5;
  for (std::size_t t : {std::size_t{1}, std::size_t{500}, std::size_t{1000}}) {
    const double mu = std::sqrt(s.alpha_bar[t]) * z0[0], sd = std::sqrt(1.0 - s.alpha_bar[t]);
    double sum = 0.0, sq = 0.0;
    Tensor eps = Tensor::matrix(1, 1);
    for (std::size_t k = 0; k < n; ++k) {
      eps[0] = rng.normal();
      const double z = q_sample(z0, t, eps, s)[0];
      sum += z;
      sq += z * z;
    }
    const double m = sum / n, v = sq / n - m * m;
    EXPECT_LE(std::abs(m - mu), 3.0 * sd / std::sqrt(static_cast<double>(n))) << "t=" << t;
    EXPECT_LE(std::abs(std::sqrt(v) - sd), 3.0 * sd / std::sqrt(2.0 * n)) << "t=" << t;
  }
}

TEST(Guidance, Identities) {
  Tensor c = Tensor::matrix(1, 1), u = Tensor::matrix(1, 1);
  c[0] = 2.0;
  u[0] = 1.0;
  EXPECT_EQ(guided_noise(c, u, 1.0)[0], 3.0);
  EXPECT_EQ(guided_noise(c, u, 0.0)[0], 2.0);
  for (double w : {0.0, 0.5, 1.0, 7.0}) EXPECT_EQ(guided_noise(u, u, w)[0], 1.0);
  EXPECT_THROW(guided_noise(c, u, -0.1), std::invalid_argument);
  numkit::Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor a = rng.normal_tensor({2u, 5u}), b = rng.normal_tensor({2u, 5u});
    const double w = 3.0 * rng.uniform();
    EXPECT_EQ(guided_noise(a, b, 0.0), a);
    EXPECT_EQ(guided_noise(a, a, w), a);
    Tensor g = guided_noise(a, b, w);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(g[i], (1 + w) * a[i] - w * b[i], 1e-14);
  }
}

TEST(DdpmStep, ZeroPredictionAndFinalStep) {
  const auto s = NoiseSchedule::linear(100);
  numkit::Rng rng(3);
  Tensor z = rng.normal_tensor({2u, 3u});
  Tensor zero = Tensor::matrix(2, 3);
  Tensor out = ddpm_step(z, zero, 1, s, rng);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_DOUBLE_EQ(out[i], z[i] / std::sqrt(s.alpha[1]));
  numkit::Rng r1(5), r2(99);
  EXPECT_EQ(ddpm_step(z, z, 1, s, r1), ddpm_step(z, z, 1, s, r2));
  EXPECT_NE(ddpm_step(z, z, 2, s, r1), ddpm_step(z, z, 2, s, r2));
}

TEST(Sampler, AnalyticPredictorDdimRecoversPoint) {
  const auto s = NoiseSchedule::linear(50);
  numkit::Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor z0 = rng.normal_tensor({1u, 8u});
    Tensor zT = rng.normal_tensor({1u, 8u}, 3.0);
    Tensor out = ddim_sample(analytic_predictor(z0, s), zT, s, 50);
    EXPECT_LE(numkit::max_abs_diff(out, z0), 1e-3);
    // determinism
    EXPECT_EQ(out, ddim_sample(analytic_predictor(z0, s), zT, s, 50));
  }
}

TEST(Sampler, AnalyticPredictorDdpmLandsNearPoint) {
  const auto s = NoiseSchedule::linear(1000);
  numkit::Rng rng(5);
  Tensor z0 = rng.normal_tensor({1u, 8u});
  Tensor out = ddpm_sample(analytic_predictor(z0, s), rng.normal_tensor({1u, 8u}), s, rng);
  EXPECT_LE(numkit::max_abs_diff(out, z0), 1e-6);
}

TEST(Sampler, SingleDdimStepIsPredictedZ0) {
  const auto s = NoiseSchedule::linear(1000);
  numkit::Rng rng(6);
  Tensor z = rng.normal_tensor({2u, 4u}), e = rng.normal_tensor({2u, 4u});
  Tensor out = ddim_step(z, e, 1000, 0, s);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double z0 = (z[i] - std::sqrt(1.0 - s.alpha_bar[1000]) * e[i]) / std::sqrt(s.alpha_bar[1000]);
    EXPECT_NEAR(out[i], z0, 1e-12 * std::max(1.0, std::abs(z0)));
  }
  EXPECT_THROW(ddim_step(z, e, 10, 10, s), std::invalid_argument);
}

TEST(Condition, ZeroLinearAndWidthChecked) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(7);
  auto p = init_diffusion_params(Modality::kLanguage, dims, rng);
  p.at("diff.l.cond.b").fill(0.0);
  Tensor x = rng.normal_tensor({3u, dims.condition_width()});
  Tape tape(false);
  Bound b(tape, p);
  Tensor c1 = build_condition(b, Modality::kLanguage, dims, tape.constant(x)).value();
  Tensor c2 = build_condition(b, Modality::kLanguage, dims, tape.constant(2.5 * x)).value();
  EXPECT_EQ(c1.rows(), 3 * dims.s_tok);
  EXPECT_EQ(c1.cols(), dims.p_tok);
  EXPECT_LE(numkit::max_abs_diff(2.5 * c1, c2), 1e-12);
  Tensor z = build_condition(b, Modality::kLanguage, dims, tape.constant(Tensor::matrix(3, dims.condition_width()))).value();
  EXPECT_EQ(numkit::l2_norm(z), 0.0);
  EXPECT_THROW(build_condition(b, Modality::kLanguage, dims, tape.constant(Tensor::matrix(3, 5))), numkit::ShapeError);
}

TEST(Predictor, ZeroWeightsGiveSkipPlusOutputBias) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(8);
  const auto s = NoiseSchedule::linear(100);
  auto p = init_diffusion_params(Modality::kVision, dims, rng);
  zero_all(p);
  Tensor bias = rng.normal_tensor({1u, dims.d});
  p.at("diff.v.out.b") = bias;
  Tape tape(false);
  Bound b(tape, p);
  Tensor z = rng.normal_tensor({2u, dims.d});
  const std::vector<std::size_t> t{3, 90};
  Tensor out = predict_noise(b, Modality::kVision, dims, tape.constant(z), t,
                             null_condition(b, Modality::kVision, dims, 2), s).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < dims.d; ++k)
      EXPECT_NEAR(out(i, k), std::sqrt(1.0 - s.alpha_bar[t[i]]) * z(i, k) + bias[k], 1e-15);
}

TEST(Predictor, NullBranchIgnoresCondition) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(9);
  auto p = init_diffusion_params(Modality::kAcoustic, dims, rng);
  const auto s = NoiseSchedule::linear(10);
  Tensor z = rng.normal_tensor({2u, dims.d});
  Tensor outs[2];
  for (int k = 0; k < 2; ++k) {
    Tape tape(false);
    Bound b(tape, p);
    Var c = build_condition(b, Modality::kAcoustic, dims, tape.constant(rng.normal_tensor({2u, dims.condition_width()})));
    Var mixed = mix_condition(b, Modality::kAcoustic, dims, c, {0.0, 0.0});
    outs[k] = predict_noise(b, Modality::kAcoustic, dims, tape.constant(z), {5, 6}, mixed, s).value();
  }
  EXPECT_EQ(outs[0], outs[1]);
}

TEST(Predictor, TrainingLossGradientMatchesFiniteDifferences) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(10);
  const auto s = NoiseSchedule::linear(100);
  double worst = 0.0;
  for (double w : {0.0, 1.0}) {
    for (int rep = 0; rep < 3; ++rep) {
      auto p = init_diffusion_params(Modality::kLanguage, dims, rng);
      Tensor zt = rng.normal_tensor({2u, dims.d}), eps = rng.normal_tensor({2u, dims.d});
      Tensor zc = rng.normal_tensor({2u, dims.condition_width()}, 0.3);
      std::vector<std::size_t> t{rng.uniform_int(1, s.T), rng.uniform_int(1, s.T)};
      worst = std::max(worst, numkit::check_parameter_gradients(
                                  [&](Tape& tape, const Bound& b) {
                                    Var c = mix_condition(b, Modality::kLanguage, dims,
                                                          build_condition(b, Modality::kLanguage, dims, tape.constant(zc)),
                                                          {1.0, 0.0});
                                    Var e = predict_noise(b, Modality::kLanguage, dims, tape.constant(zt), t, c, s);
                                    if (w != 0.0) {
                                      Var u = predict_noise(b, Modality::kLanguage, dims, tape.constant(zt), t,
                                                            null_condition(b, Modality::kLanguage, dims, 2), s);
                                      e = numkit::sub(numkit::scale(e, 1.0 + w), numkit::scale(u, w));
                                    }
                                    return numkit::squared_norm(numkit::sub(tape.constant(eps), e), 2.0);
                                  },
                                  p, rng, 3));
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Training, ReducesLossAndRejectsBadInput) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(11);
  DiffusionConfig cfg;
  cfg.t_train = 100;
  cfg.batch = 16;
  const auto s = NoiseSchedule::linear(cfg.t_train);
  DiffusionData data;
  data.z0 = rng.normal_tensor({64u, dims.d});
  data.cond = rng.normal_tensor({64u, dims.condition_width()}, 0.3);
  data.has_cond.assign(64, true);
  auto p = init_diffusion_params(Modality::kVision, dims, rng);
  std::vector<std::size_t> all(64);
  for (std::size_t i = 0; i < 64; ++i) all[i] = i;
  numkit::Rng r0(1);
  const double before = diffusion_train_step(p, Modality::kVision, dims, data, all, cfg, s, r0).loss;
  numkit::Rng r1(2);
  train_diffusion(p, Modality::kVision, dims, data, 60, cfg, s, r1);
  numkit::Rng r2(1);
  const double after = diffusion_train_step(p, Modality::kVision, dims, data, all, cfg, s, r2).loss;
  EXPECT_LT(after, 0.8 * before);

  cfg.p_drop = 1.0;
  EXPECT_THROW(diffusion_train_step(p, Modality::kVision, dims, data, all, cfg, s, r2), std::invalid_argument);
  cfg.p_drop = 0.1;
  EXPECT_THROW(diffusion_train_step(p, Modality::kVision, dims, data, {}, cfg, s, r2), std::invalid_argument);
}

TEST(Training, FullDropoutMakesConditionIrrelevant) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(12);
  DiffusionConfig cfg;
  cfg.t_train = 50;
  cfg.p_drop = 0.999999999;
  const auto s = NoiseSchedule::linear(cfg.t_train);
  DiffusionData data;
  data.z0 = rng.normal_tensor({8u, dims.d});
  data.cond = rng.normal_tensor({8u, dims.condition_width()});
  data.has_cond.assign(8, true);
  auto p = init_diffusion_params(Modality::kVision, dims, rng);
  numkit::Rng r(3);
  auto g = diffusion_train_step(p, Modality::kVision, dims, data, {0, 1, 2, 3, 4, 5, 6, 7}, cfg, s, r).grads;
  EXPECT_EQ(numkit::l2_norm(g.at("diff.v.cond.w")), 0.0);
  EXPECT_GT(numkit::l2_norm(g.at("diff.v.null")), 0.0);
}

TEST(Sampling, DeterministicForSeedAndFiniteShape) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(13);
  auto p = init_diffusion_params(Modality::kLanguage, dims, rng);
  const auto s = NoiseSchedule::linear(100);
  Tensor cond = rng.normal_tensor({5u, dims.condition_width()}, 0.3);
  std::vector<bool> has{true, false, true, true, false};
  SamplerConfig sc;
  sc.timesteps = 10;
  numkit::Rng a(7), b(7);
  Tensor x = sample_latents(p, Modality::kLanguage, dims, cond, has, sc, s, a);
  EXPECT_EQ(x, sample_latents(p, Modality::kLanguage, dims, cond, has, sc, s, b));
  EXPECT_EQ(x.rows(), 5u);
  EXPECT_EQ(x.cols(), dims.d);
  EXPECT_TRUE(x.all_finite());
}
