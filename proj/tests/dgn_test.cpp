#include <gtest/gtest.h>

#include <set>

#include "fedrec/dgn.hpp"
#include "fedrec/numkit/gradcheck.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace fedrec;
using namespace fedrec::dgn;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

namespace {

using oracle::brute_force_edges;
using oracle::random_speakers;

Tensor run_rgcn(const DialogueGraph& g, const Tensor& h, const std::array<Tensor, 3>& w, RelationKind kind) {
  Tape tape(false);
  std::array<Var, 3> wv;
  for (std::size_t r = 0; r < 3; ++r) wv[r] = tape.constant(w[r]);
  return rgcn_layer(g, tape.constant(h), wv, kind, all_available(g.nodes)).value();
}

}  // namespace

TEST(DialogueGraph, SingleNode) {
  std::vector<int> spk{0};
  auto g = build_dialogue_graph(spk, 1);
  ASSERT_EQ(g.edges.size(), 1u);
  EXPECT_EQ(g.edges[0].speaker, SpeakerRelation::kSame);
  EXPECT_EQ(g.edges[0].context, ContextRelation::kPresent);
}

TEST(DialogueGraph, WindowOfFirstNode) {
  std::vector<int> spk{0, 1, 0, 1};
  auto g = build_dialogue_graph(spk, 2);
  std::set<std::size_t> out;
  for (const auto& e : g.edges)
    if (e.from == 0) out.insert(e.to + 1);
  EXPECT_EQ(out, (std::set<std::size_t>{1, 2, 3}));
}

TEST(DialogueGraph, RejectsBadWindow) {
  std::vector<int> spk{0, 1};
  EXPECT_THROW(build_dialogue_graph(spk, 0), std::invalid_argument);
}

TEST(DialogueGraph, MatchesBruteForceEnumeration) {
  numkit::Rng rng(21);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = rng.uniform_int(1, 10);
    const std::size_t w = rng.uniform_int(1, 3);
    auto spk = random_speakers(rng, n, static_cast<int>(rng.uniform_int(2, 4)));
    auto g = build_dialogue_graph(spk, w);
    ASSERT_EQ(g.edges, brute_force_edges(spk, w)) << "case " << rep;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t deg = 0;
      for (const auto& e : g.edges) deg += e.from == i;
      const long i1 = static_cast<long>(i) + 1;
      EXPECT_EQ(static_cast<long>(deg), std::min(i1 + static_cast<long>(w), static_cast<long>(n)) -
                                            std::max(i1 - static_cast<long>(w), 1L) + 1);
    }
  }
}

TEST(DialogueGraph, TwoSpeakersRealizeAtMostThreeRelations) {
  numkit::Rng rng(3);
  auto spk = random_speakers(rng, 10, 2);
  auto g = build_dialogue_graph(spk, 3);
  std::set<SpeakerRelation> rel;
  for (const auto& e : g.edges) rel.insert(e.speaker);
  EXPECT_LE(rel.size(), 3u);
}

TEST(DialogueGraph, ReversalSwapsForwardAndBackward) {
  numkit::Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = rng.uniform_int(2, 10);
    auto spk = random_speakers(rng, n, 3);
    auto rev = spk;
    std::reverse(rev.begin(), rev.end());
    auto g = build_dialogue_graph(spk, 2), gr = build_dialogue_graph(rev, 2);
    ASSERT_EQ(g.edges.size(), gr.edges.size());
    for (const auto& e : g.edges) {
      const std::size_t i = n - 1 - e.from, j = n - 1 - e.to;
      auto it = std::find_if(gr.edges.begin(), gr.edges.end(), [&](const Edge& x) { return x.from == i && x.to == j; });
      ASSERT_NE(it, gr.edges.end());
      if (e.context == ContextRelation::kForward) {
        EXPECT_EQ(it->context, ContextRelation::kBackward);
      }
      if (e.context == ContextRelation::kBackward) {
        EXPECT_EQ(it->context, ContextRelation::kForward);
      }
      if (e.context == ContextRelation::kPresent) {
        EXPECT_EQ(it->context, ContextRelation::kPresent);
      }
    }
  }
}

TEST(Rgcn, IdentityOnIsolatedSelfEdge) {
  std::vector<int> spk{0};
  auto g = build_dialogue_graph(spk, 1);
  std::array<Tensor, 3> w{Tensor::identity(2), Tensor::matrix(2, 2), Tensor::matrix(2, 2)};
  EXPECT_EQ(run_rgcn(g, Tensor::from_rows({{1, -2}}), w, RelationKind::kSpeaker), Tensor::from_rows({{1, 0}}));
}

TEST(Rgcn, MeanOverNeighbourhood) {
  // node 0 sees node 1 (forward) and itself (present); isolate the forward relation.
  std::vector<int> spk{0, 0};
  auto g = build_dialogue_graph(spk, 1);
  std::array<Tensor, 3> w{Tensor::identity(2), Tensor::matrix(2, 2), Tensor::matrix(2, 2)};
  Tensor v = run_rgcn(g, Tensor::from_rows({{2, 0}, {0, 2}}), w, RelationKind::kSpeaker);
  EXPECT_DOUBLE_EQ(v(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(v(0, 1), 1.0);
}

TEST(Rgcn, MatchesLiteralDoubleSum) {
  numkit::Rng rng(5);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = rng.uniform_int(1, 8), d = rng.uniform_int(1, 5);
    auto g = build_dialogue_graph(random_speakers(rng, n, 3), rng.uniform_int(1, 3));
    Tensor h = rng.normal_tensor({n, d});
    std::array<Tensor, 3> w;
    for (auto& m : w) m = rng.normal_tensor({d, d});
    for (auto kind : {RelationKind::kSpeaker, RelationKind::kContext})
      worst = std::max(worst, numkit::max_abs_diff(run_rgcn(g, h, w, kind), oracle::rgcn_double_sum(g, h, w, kind)));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Rgcn, RejectsMissingRelationWeight) {
  std::vector<int> spk{0, 1};
  auto g = build_dialogue_graph(spk, 1);
  Tape tape(false);
  std::vector<Var> two{tape.constant(Tensor::identity(2)), tape.constant(Tensor::identity(2))};
  EXPECT_THROW(rgcn_layer(g, tape.constant(Tensor::matrix(2, 2)), two, RelationKind::kContext, all_available(2)),
               std::invalid_argument);
}

TEST(DgnForward, ZeroRelationWeightsGiveZeroLatents) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(1);
  auto p = init_dgn_params(dims, rng);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i).find(".spk.") != std::string::npos || p.name(i).find(".ctx.") != std::string::npos) p.value(i).fill(0.0);
  std::vector<int> spk{0, 1, 0};
  auto g = build_dialogue_graph(spk, 2);
  std::vector<ModalitySet> avail(3, ModalitySet::all());
  Tape tape(false);
  numkit::Bound b(tape, p);
  auto out = dgn_forward(tape, b, dims, g, testutil::random_latents(rng, 3, dims.d), avail);
  for (const auto& z : out.z) EXPECT_EQ(z.value(), Tensor::matrix(3, dims.d));
}

TEST(DgnForward, MaskedFeaturesAreIgnored) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(2);
  auto p = init_dgn_params(dims, rng);
  std::vector<int> spk{0, 1, 1, 0};
  auto g = build_dialogue_graph(spk, 2);
  std::vector<ModalitySet> avail{ModalitySet::parse("v"), ModalitySet::parse("v"), ModalitySet::parse("lv"),
                                 ModalitySet::parse("v")};
  auto h = testutil::random_latents(rng, 4, dims.d);
  auto h2 = h;
  h2[index_of(Modality::kAcoustic)] = rng.normal_tensor({4u, dims.d}, 5.0);
  for (std::size_t k = 0; k < dims.d; ++k) {
    h2[index_of(Modality::kLanguage)](0, k) += 3.0;  // l missing on utterance 0
    h2[index_of(Modality::kLanguage)](3, k) -= 1.0;
  }
  auto run = [&](const std::array<Tensor, 3>& lat) {
    Tape tape(false);
    numkit::Bound b(tape, p);
    return dgn_forward(tape, b, dims, g, lat, avail).logits.value();
  };
  EXPECT_EQ(run(h), run(h2));
}

TEST(DgnForward, RejectsBatchWithoutModalities) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(2);
  auto p = init_dgn_params(dims, rng);
  std::vector<int> spk{0};
  auto g = build_dialogue_graph(spk, 1);
  std::vector<ModalitySet> none{ModalitySet::none()};
  Tape tape(false);
  numkit::Bound b(tape, p);
  EXPECT_THROW(dgn_forward(tape, b, dims, g, testutil::random_latents(rng, 1, dims.d), none), std::invalid_argument);
}

TEST(DgnLoss, UniformAndDelegation) {
  Tape tape(false);
  std::vector<int> y{0, 5, 3};
  EXPECT_NEAR(dgn_loss(tape.constant(Tensor::matrix(3, 6)), y).value()[0], std::log(6.0), 1e-14);
  numkit::Rng rng(1);
  Var l = tape.constant(rng.normal_tensor({3, 6}));
  const double a = dgn_loss(l, y).value()[0];
  EXPECT_EQ(a, numkit::cross_entropy(l, y).value()[0]);
}

TEST(DgnForward, GradientOfLossMatchesFiniteDifferences) {
  auto dims = testutil::tiny_dims();
  numkit::Rng rng(8);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    auto p = init_dgn_params(dims, rng);
    std::vector<int> spk{0, 1, 0};
    auto g = build_dialogue_graph(spk, 1 + static_cast<std::size_t>(rep % 3));
    auto h = testutil::random_latents(rng, 3, dims.d);
    std::vector<ModalitySet> avail{ModalitySet::all(), ModalitySet::parse("la"), ModalitySet::parse("v")};
    auto y = testutil::random_labels(rng, 3, dims.n_classes);
    worst = std::max(worst, numkit::check_parameter_gradients(
                                [&](Tape& t, const numkit::Bound& b) {
                                  return dgn_loss(dgn_forward(t, b, dims, g, h, avail).logits, y);
                                },
                                p, rng, 4));
  }
  EXPECT_LE(worst, 1e-4);
}
