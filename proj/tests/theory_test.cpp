#include <gtest/gtest.h>

#include "fedrec/theory.hpp"

using namespace fedrec::theory;
using Eigen::VectorXd;

namespace {
VectorXd random_point(std::size_t n, fedrec::numkit::Rng& rng, double scale = 3.0) {
  VectorXd v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = scale * rng.normal();
  return v;
}
}  // namespace

TEST(Quadratic, SpectrumSmoothnessAndPl) {
  auto p = make_quadratic(12, 0.2, 3.0, 5);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.A);
  EXPECT_NEAR(es.eigenvalues().maxCoeff(), 3.0, 1e-10);
  EXPECT_NEAR(es.eigenvalues().minCoeff(), 0.2, 1e-10);
  fedrec::numkit::Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    VectorXd th = random_point(12, rng);
    const VectorXd g = p.grad(th);
    EXPECT_GE(0.5 * g.squaredNorm(), p.mu * p.gap(th) * (1 - 1e-12));
    EXPECT_NEAR(p.value(th) - p.f_star, p.gap(th), 1e-9 * (1 + std::abs(p.f_star)));
    // smoothness along a random pair
    VectorXd th2 = random_point(12, rng);
    EXPECT_LE((p.grad(th) - p.grad(th2)).norm(), p.M * (th - th2).norm() * (1 + 1e-12));
  }
  EXPECT_THROW(make_quadratic(3, 2.0, 1.0, 1), std::invalid_argument);
  EXPECT_THROW(make_quadratic(3, 0.0, 1.0, 1), std::invalid_argument);
}

TEST(Quadratic, IsotropicUnitStepConvergesInOneStep) {
  auto p = make_quadratic(8, 1.0, 1.0, 3);
  fedrec::numkit::Rng rng(1);
  VectorXd th = random_point(8, rng);
  th -= p.grad(th);
  EXPECT_LE(p.gap(th), 1e-24);
}

TEST(AlternatingFreeze, StartAtOptimumStaysConstant) {
  auto F = make_quadratic(5, 0.1, 1.0, 1), G = make_quadratic(4, 0.1, 1.0, 2);
  auto tr = run_alternating_freeze(F, G, 1.0, 1.0, 10, F.theta_star, G.theta_star);
  for (double g : tr.gap) EXPECT_EQ(g, 0.0);
}

TEST(AlternatingFreeze, EmptyBlockReducesToGradientDescent) {
  auto F = make_quadratic(6, 0.3, 1.0, 4), G = make_quadratic(0, 1.0, 1.0, 0);
  fedrec::numkit::Rng rng(3);
  VectorXd th = random_point(6, rng);
  auto tr = run_alternating_freeze(F, G, 0.7, 0.7, 15, th, VectorXd());
  VectorXd gd = th;
  for (int r = 1; r <= 15; ++r) {
    gd -= 0.7 * F.grad(gd);
    EXPECT_NEAR(tr.gap[r], F.gap(gd), 1e-15);
  }
}

TEST(AlternatingFreeze, RejectsOversizedStep) {
  auto F = make_quadratic(3, 0.1, 2.0, 1), G = make_quadratic(3, 0.1, 1.0, 2);
  EXPECT_THROW(run_alternating_freeze(F, G, 0.6, 0.5, 3, F.theta_star, G.theta_star), std::invalid_argument);
  EXPECT_THROW(run_alternating_freeze(F, G, 0.5, 1.5, 3, F.theta_star, G.theta_star), std::invalid_argument);
  EXPECT_THROW(run_alternating_freeze(F, G, 0.5, 0.5, 3, VectorXd::Zero(2), G.theta_star), std::invalid_argument);
}

TEST(Theorem3, LinearRateHoldsAcrossSeeds) {
  auto v = theorem3_suite({0.1, 0.5}, 20, 20, 50, 11);
  EXPECT_TRUE(v.pass);
  EXPECT_EQ(v.violations, 0u);
  EXPECT_EQ(v.seeds, 40u);
  EXPECT_LE(v.measured, 1.0);
}

TEST(Theorem3, IsotropicGapVanishesAfterOneAlternation) {
  auto F = make_quadratic(5, 1.0, 1.0, 1), G = make_quadratic(5, 1.0, 1.0, 2);
  fedrec::numkit::Rng rng(5);
  auto tr = run_alternating_freeze(F, G, 1.0, 1.0, 3, random_point(5, rng), random_point(5, rng));
  EXPECT_LE(tr.gap[1], 1e-12);
  EXPECT_TRUE(verify_theorem3(tr, 1.0, 1.0).pass);
}

TEST(Theorem3, DivergingStepIsReported) {
  auto F = make_quadratic(5, 0.1, 1.0, 1), G = make_quadratic(5, 0.1, 1.0, 2);
  fedrec::numkit::Rng rng(5);
  auto tr = run_alternating_freeze(F, G, 2.5, 2.5, 20, random_point(5, rng), random_point(5, rng), false);
  auto chk = verify_theorem3(tr, 0.1, 1.0);
  EXPECT_FALSE(chk.pass);
  EXPECT_GT(chk.worst_ratio, 1.0);
}

TEST(Theorem1, NoiselessCorollaryIsGradientDescent) {
  auto F = make_quadratic(10, 0.1, 1.0, 7);
  FedAvgSurrogate c;
  c.K = 1;
  c.E = 1;
  c.T = 25;
  const VectorXd th0 = VectorXd::Zero(10);
  auto out = run_fedavg_surrogate(F, c, th0, 3);
  VectorXd gd = th0;
  for (std::size_t t = 0; t < c.T; ++t) gd -= F.grad(gd);
  EXPECT_LE((out - gd).norm(), 1e-12);
  EXPECT_LE(F.gap(out), theorem1_rhs(F, c, th0));
  EXPECT_LE(F.gap(out), F.M * (th0 - F.theta_star).squaredNorm() / (2.0 * c.T));
}

TEST(Theorem1, NoisyRunsStayBelowBound) {
  auto v = theorem1_suite(30, 21);
  EXPECT_TRUE(v.pass) << v.measured << " vs " << v.bound;
  EXPECT_EQ(v.seeds, 8u * 30u);

  auto F = make_quadratic(10, 0.1, 1.0, 9);
  FedAvgSurrogate quiet, noisy;
  noisy.sigma = 0.5;
  auto a = verify_theorem1(F, quiet, 30, 1), b = verify_theorem1(F, noisy, 30, 1);
  EXPECT_GT(b.mean_gap, a.mean_gap);
  EXPECT_TRUE(b.pass);
}

TEST(Theorem1, AggregationBiasScalesQuadratically) {
  auto F = make_quadratic(10, 0.1, 1.0, 4);
  FedAvgSurrogate c;
  c.delta_agg = 0.05;
  // start at the optimum so the measured gap is the aggregation contribution alone
  auto run = [&](double d) {
    c.delta_agg = d;
    double m = 0.0;
    for (std::uint64_t s = 0; s < 30; ++s) m += F.gap(run_fedavg_surrogate(F, c, F.theta_star, s));
    return m / 30.0;
  };
  const double one = run(0.05), two = run(0.1);
  EXPECT_GT(one, 0.0);
  EXPECT_LE(two, 4.0 * one * (1 + 1e-9));
  c.delta_agg = 0.1;
  EXPECT_TRUE(verify_theorem1(F, c, 30, 2).pass);
}

TEST(Theorem1, ExcessNoiseIsDetected) {
  auto F = make_quadratic(10, 0.1, 1.0, 7);
  FedAvgSurrogate c;
  c.sigma = 0.1;
  c.noise_multiplier = 30.0;
  EXPECT_FALSE(verify_theorem1(F, c, 30, 1).pass);
  c.K = 7;
  EXPECT_THROW(run_fedavg_surrogate(F, c, VectorXd::Zero(10), 1), std::invalid_argument);
}

TEST(Theorem2, CumulativeCoefficientMatchesDirectSum) {
  auto s = fedrec::diff::NoiseSchedule::linear(1000);
  // full chain: each step is a single schedule step
  double direct = 0.0;
  for (std::size_t t = 1; t <= 1000; ++t)
    direct += (1 - s.alpha[t]) / (std::sqrt(s.alpha[t]) * std::sqrt(1 - s.alpha_bar[t]));
  EXPECT_NEAR(cumulative_coefficient(s, 1000), direct, 1e-9 * direct);
  EXPECT_GT(cumulative_coefficient(s, 50), 0.0);
}

TEST(Theorem2, ExactLimitMonotoneAndBelowCeiling) {
  Theorem2Config c;
  auto r = measure_theorem2(c, 3);
  EXPECT_LE(r.exact_error, 1e-3);
  EXPECT_TRUE(r.monotone);
  EXPECT_TRUE(r.below_bound);
  ASSERT_EQ(r.medians.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_LE(r.medians[k], r.bounds[k]);
  EXPECT_TRUE(theorem2_verdict(r, c.trials).pass);
}
