#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Each one follows the printed definition literally.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fedrec/dgn.hpp"
#include "fedrec/numkit/rng.hpp"
#include "fedrec/numkit/tensor.hpp"

namespace fedrec::oracle {

inline std::vector<int> random_speakers(numkit::Rng& rng, std::size_t n, int n_speakers) {
  std::vector<int> s(n);
  for (auto& v : s) v = static_cast<int>(rng.uniform_int(0, static_cast<std::size_t>(n_speakers - 1)));
  return s;
}

// Literal per-node sums over the window predicate, 1-based as printed.
inline std::vector<dgn::Edge> brute_force_edges(const std::vector<int>& spk, std::size_t w) {
  using namespace dgn;
  std::vector<Edge> out;
  const long n = static_cast<long>(spk.size());
  for (long i = 1; i <= n; ++i)
    for (long j = 1; j <= n; ++j) {
      if (j < std::max(i - static_cast<long>(w), 1L) || j > std::min(i + static_cast<long>(w), n)) continue;
      Edge e{static_cast<std::size_t>(i - 1), static_cast<std::size_t>(j - 1)};
      e.context = j > i ? ContextRelation::kForward : (j == i ? ContextRelation::kPresent : ContextRelation::kBackward);
      if (spk[i - 1] == spk[j - 1]) e.speaker = SpeakerRelation::kSame;
      else e.speaker = j > i ? SpeakerRelation::kCrossForward : SpeakerRelation::kCrossBackward;
      out.push_back(e);
    }
  return out;
}

// Relational graph convolution as nested sums over relations and neighbours.
inline numkit::Tensor rgcn_double_sum(const dgn::DialogueGraph& g, const numkit::Tensor& h,
                                      const std::array<numkit::Tensor, 3>& w, dgn::RelationKind kind) {
  const std::size_t d_out = w[0].rows(), d_in = h.cols();
  numkit::Tensor v = numkit::Tensor::matrix(g.nodes, d_out);
  for (std::size_t i = 0; i < g.nodes; ++i) {
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<std::size_t> nb;
      for (const auto& e : g.edges)
        if (e.from == i && g.relation_of(e, kind) == r) nb.push_back(e.to);
      for (auto j : nb)
        for (std::size_t a = 0; a < d_out; ++a) {
          double s = 0.0;
          for (std::size_t b = 0; b < d_in; ++b) s += w[r](a, b) * h(j, b);
          v(i, a) += s / static_cast<double>(nb.size());
        }
    }
    for (std::size_t a = 0; a < d_out; ++a) v(i, a) = std::max(0.0, v(i, a));
  }
  return v;
}

struct Metrics {
  double acc = 0.0, waf1 = 0.0;
};

// Per-class counting straight from the definitions, no confusion matrix.
inline Metrics brute_force_metrics(const std::vector<int>& p, const std::vector<int>& y, int k) {
  Metrics o;
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) o.acc += p[i] == y[i];
  o.acc /= n;
  for (int c = 0; c < k; ++c) {
    double tp = 0, fp = 0, fn = 0, sup = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (p[i] == c && y[i] == c) ++tp;
      if (p[i] == c && y[i] != c) ++fp;
      if (p[i] != c && y[i] == c) ++fn;
      if (y[i] == c) ++sup;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0, rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    o.waf1 += sup / n * f1;
  }
  return o;
}

// Average rank of |x_i| among the nonzero |x|, by counting.
inline std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0, equal = 0;
    for (double v : x) {
      below += std::abs(v) < std::abs(x[i]);
      equal += std::abs(v) == std::abs(x[i]);
    }
    r[i] = below + (equal + 1.0) / 2.0;
  }
  return r;
}

struct Signed {
  double w = 0.0, p = 1.0;
};

// Zero differences dropped; W = positive rank sum; p = P(W' >= W) over all 2^N sign patterns.
inline Signed wilcoxon_enumeration(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double v : diffs)
    if (v != 0.0) d.push_back(v);
  const auto ranks = brute_ranks(d);
  Signed s;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) s.w += ranks[i];
  const std::size_t n = d.size();
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) t += ranks[i];
    if (t >= s.w - 1e-9) ++hits;
  }
  s.p = static_cast<double>(hits) / std::ldexp(1.0, static_cast<int>(n));
  return s;
}

// Σ_k (n_k / Σn) x_k over flat vectors.
inline std::vector<double> flat_weighted_mean(const std::vector<std::vector<double>>& xs, const std::vector<double>& n) {
  double total = 0.0;
  for (double v : n) total += v;
  std::vector<double> out(xs.at(0).size(), 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += n[k] / total * xs[k][j];
  return out;
}

}  // namespace fedrec::oracle
