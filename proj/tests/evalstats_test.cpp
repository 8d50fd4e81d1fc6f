#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fedrec/classifier.hpp"
#include "fedrec/evalstats.hpp"
#include "fedrec/numkit/gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fedrec;
using namespace fedrec::eval;
using numkit::Bound;
using numkit::Tape;
using numkit::Tensor;

namespace {

}  // namespace

TEST(Metrics, PerfectAndBinaryExample) {
  std::vector<int> y{0, 1, 2, 2, 1};
  EXPECT_EQ(accuracy(y, y), 1.0);
  EXPECT_EQ(waf1(y, y), 1.0);
  std::vector<int> p{1, 1, 0, 0}, l{1, 0, 0, 0};
  EXPECT_EQ(accuracy(p, l), 0.75);
  // class 1: P=1/2 R=1 F1=2/3; class 0: P=1 R=2/3 F1=4/5
  EXPECT_NEAR(waf1(p, l), 0.25 * (2.0 / 3.0) + 0.75 * 0.8, 1e-15);
  EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST(Metrics, AbsentClassHasZeroWeight) {
  std::vector<int> p{0, 1, 1}, y{0, 1, 0};
  auto r3 = evaluate(p, y, 3), r2 = evaluate(p, y, 2);
  EXPECT_EQ(r3.support[2], 0u);
  EXPECT_EQ(r3.waf1, r2.waf1);
}

TEST(Metrics, MatchBruteForceOnRandomSettings) {
  numkit::Rng rng(1);
  for (int rep = 0; rep < 200; ++rep) {
    const int k = static_cast<int>(rng.uniform_int(2, 6));
    const std::size_t n = rng.uniform_int(1, 60);
    auto y = testutil::random_labels(rng, n, k), p = testutil::random_labels(rng, n, k);
    auto r = evaluate(p, y, k);
    auto o = oracle::brute_force_metrics(p, y, k);
    EXPECT_NEAR(r.accuracy, o.acc, 1e-12);
    EXPECT_NEAR(r.waf1, o.waf1, 1e-12);
    EXPECT_GE(r.waf1, 0.0);
    EXPECT_LE(r.waf1, 1.0);
    std::size_t trace = 0;
    for (int c = 0; c < k; ++c) {
      std::size_t row = 0;
      for (int j = 0; j < k; ++j) row += r.confusion[c][j];
      EXPECT_EQ(row, r.support[c]);
      trace += r.confusion[c][c];
    }
    EXPECT_EQ(r.accuracy, static_cast<double>(trace) / static_cast<double>(n));
  }
}

TEST(Metrics, JsonHasFields) {
  std::vector<int> y{0, 1};
  auto j = to_json(evaluate(y, y, 2));
  EXPECT_EQ(j["accuracy"], 1.0);
  EXPECT_EQ(j["confusion"][1][1], 1);
}

TEST(Wilcoxon, AllPositiveSix) {
  auto r = wilcoxon_signed_rank_exact({0.5, 1.0, 1.5, 2.0, 2.5, 3.0});
  EXPECT_EQ(r.w, 21.0);
  EXPECT_EQ(r.p, 0.015625);
  auto neg = wilcoxon_signed_rank_exact({-0.5, -1.0, -1.5, -2.0, -2.5, -3.0});
  EXPECT_EQ(neg.w, 0.0);
  EXPECT_EQ(neg.p, 1.0);
}

TEST(Wilcoxon, ZerosExcludedAndRejections) {
  auto r = wilcoxon_signed_rank_exact({0.0, 1.0, 2.0, 0.0});
  EXPECT_EQ(r.n, 2u);
  EXPECT_EQ(r.p, 0.25);
  EXPECT_THROW(wilcoxon_signed_rank_exact({0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(wilcoxon_signed_rank_exact(std::vector<double>(21, 1.0)), std::invalid_argument);
}

TEST(Wilcoxon, MatchesEnumerationIncludingTies) {
  numkit::Rng rng(2);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = rng.uniform_int(1, 10);
    std::vector<double> d(n);
    const bool ties = rep % 2 == 0;
    for (auto& v : d) {
      v = ties ? static_cast<double>(rng.uniform_int(1, 4)) : rng.uniform() + 0.01;
      if (rng.bernoulli(0.4)) v = -v;
    }
    auto r = wilcoxon_signed_rank_exact(d);
    auto o = oracle::wilcoxon_enumeration(d);
    EXPECT_EQ(r.w, o.w);
    EXPECT_DOUBLE_EQ(r.p, o.p);
    EXPECT_EQ(average_ranks(d), oracle::brute_ranks(d));
    if (!ties) {
      const double scaled = r.p * std::ldexp(1.0, static_cast<int>(n));
      EXPECT_EQ(scaled, std::round(scaled));
    }
  }
}

TEST(Wilcoxon, AverageRanksOnTies) {
  EXPECT_EQ(average_ranks({3.0, -1.0, 1.0, 2.0}), (std::vector<double>{4.0, 1.5, 1.5, 3.0}));
}

TEST(RankBiserial, Arithmetic) {
  EXPECT_EQ(rank_biserial(0.0, 5), 0.0);
  EXPECT_EQ(rank_biserial(2.0, 4), 1.0);
  EXPECT_NEAR(rank_biserial(1.886, 6), 0.77, 0.005);
  EXPECT_THROW(rank_biserial(1.0, 0), std::invalid_argument);
}

TEST(Pca, AxisAlignedRecoveredUpToSign) {
  Eigen::MatrixXd x(4, 2);
  x << 3, 0, -3, 0, 0, 1, 0, -1;
  auto p = pca_2d(x);
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(std::abs(p.coords(i, 0)), std::abs(x(i, 0)), 1e-12);
    EXPECT_NEAR(std::abs(p.coords(i, 1)), std::abs(x(i, 1)), 1e-12);
  }
}

TEST(Pca, DuplicatesTranslationAndReconstruction) {
  numkit::Rng rng(3);
  Eigen::MatrixXd x(30, 5);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) = rng.normal() * static_cast<double>(k + 1);
  auto p = pca_2d(x);
  Eigen::MatrixXd dup(60, 5);
  dup << x, x;
  EXPECT_LE((pca_2d(dup).components - p.components).cwiseAbs().maxCoeff(), 1e-10);
  Eigen::MatrixXd shifted = x.rowwise() + Eigen::RowVectorXd::Constant(5, 7.0);
  EXPECT_LE((pca_2d(shifted).coords - p.coords).cwiseAbs().maxCoeff(), 1e-9);
  // mean squared reconstruction error equals the trailing eigenvalue mass
  Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd rec = p.coords * p.components.transpose();
  const double err = (c - rec).squaredNorm() / static_cast<double>(x.rows());
  EXPECT_NEAR(err, p.eigenvalues.tail(3).sum(), 1e-9);
  for (int k = 0; k < 2; ++k) {
    Eigen::Index arg;
    p.components.col(k).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(p.components(arg, k), 0.0);
  }
}

TEST(Pca, RejectsDegenerateInput) {
  EXPECT_THROW(pca_2d(Eigen::MatrixXd::Ones(5, 3)), std::invalid_argument);
  EXPECT_THROW(pca_2d(Eigen::MatrixXd::Random(2, 3)), std::invalid_argument);
}

TEST(Pca, CsvCarriesHash) {
  Eigen::MatrixXd x(3, 2);
  x << 1, 0, 0, 1, -1, -1;
  std::ostringstream os;
  write_projection_csv(os, pca_2d(x), {0, 1, 2}, "orig", "abc");
  EXPECT_EQ(os.str().rfind("# config_hash=abc\nx,y,label,tag\n", 0), 0u);
}

TEST(Centroid, IdentityTranslationAbsent) {
  numkit::Rng rng(4);
  Eigen::MatrixXd x(6, 3);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index k = 0; k < 3; ++k) x(i, k) = rng.normal();
  std::vector<int> y{0, 0, 1, 1, 0, 1};
  auto same = centroid_recovery_error(x, x, y, 3);
  EXPECT_EQ(same.mean, 0.0);
  EXPECT_FALSE(same.per_class[2].has_value());
  Eigen::RowVectorXd v(3);
  v << 1, 2, 2;
  auto shifted = centroid_recovery_error(x.rowwise() + v, x, y, 3);
  EXPECT_NEAR(*shifted.per_class[0], 3.0, 1e-12);
  EXPECT_NEAR(shifted.mean, 3.0, 1e-12);
}

TEST(Classifier, ZeroWeightsGiveBiasLogits) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(5);
  auto p = cls::init_classifier_params(dims, rng);
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i).fill(0.0);
  p.at("cls.mlp2.b")[1] = 0.7;
  auto x = testutil::random_latents(rng, 4, dims.d);
  Tensor l = cls::predict_logits(p, dims, x);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(l(i, 0), 0.0);
    EXPECT_EQ(l(i, 1), 0.7);
  }
}

TEST(Classifier, PermutingSamplesPermutesLogits) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(6);
  auto p = cls::init_classifier_params(dims, rng);
  auto x = testutil::random_latents(rng, 5, dims.d);
  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor a = cls::predict_logits(p, dims, x), b = cls::predict_logits(p, dims, cls::gather(x, perm));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t k = 0; k < a.cols(); ++k) EXPECT_NEAR(b(r, k), a(perm[r], k), 1e-12);
}

TEST(Classifier, RejectsMissingModality) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(7);
  auto p = cls::init_classifier_params(dims, rng);
  auto x = testutil::random_latents(rng, 3, dims.d);
  x[1] = Tensor();
  EXPECT_THROW(cls::predict_logits(p, dims, x), std::invalid_argument);
}

TEST(Classifier, GradientMatchesFiniteDifferences) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(8);
  double worst = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    auto p = cls::init_classifier_params(dims, rng);
    auto x = testutil::random_latents(rng, 3, dims.d);
    auto y = testutil::random_labels(rng, 3, dims.n_classes);
    worst = std::max(worst, numkit::check_parameter_gradients(
                                [&](Tape& t, const Bound& b) { return numkit::cross_entropy(cls::classify(t, b, dims, x), y); },
                                p, rng, 3));
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Classifier, LearnsSeparableData) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(9);
  auto y = testutil::random_labels(rng, 120, dims.n_classes);
  auto x = testutil::random_latents(rng, 120, dims.d, 0.5);
  for (std::size_t i = 0; i < 120; ++i) x[0](i, static_cast<std::size_t>(y[i])) += 2.0;
  auto p = cls::init_classifier_params(dims, rng);
  cls::ClassifierConfig cfg;
  cfg.lr = 5e-3;
  const double first = cls::train_classifier(p, dims, x, y, 1, cfg, rng);
  const double last = cls::train_classifier(p, dims, x, y, 30, cfg, rng);
  EXPECT_LT(last, 0.5 * first);
  EXPECT_GT(accuracy(cls::argmax_rows(cls::predict_logits(p, dims, x)), y), 0.9);
}
