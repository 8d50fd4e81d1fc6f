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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace fedrec::eval {

inline void check_pairs(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("predictions and labels differ in length");
  if (preds.empty()) throw std::invalid_argument("metrics need at least one sample");
}

inline double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pairs(preds, labels);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(preds.size());
}

struct EvalReport {
  int n_classes = 0;
  std::size_t n = 0;
  double accuracy = 0.0;
  double waf1 = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  std::vector<std::vector<std::size_t>> confusion;  // [true][pred]
};

inline EvalReport evaluate(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  check_pairs(preds, labels);
  EvalReport r;
  r.n_classes = n_classes;
  r.n = preds.size();
  const auto k = static_cast<std::size_t>(n_classes);
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes) {
      throw std::out_of_range("class index outside [0, n_classes)");
    }
    ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  r.support.assign(k, 0);
  std::size_t correct = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = r.confusion[c][c], pred_c = 0;
    for (std::size_t t = 0; t < k; ++t) {
      r.support[c] += r.confusion[c][t];
      pred_c += r.confusion[t][c];
    }
    correct += tp;
    r.precision[c] = pred_c ? static_cast<double>(tp) / static_cast<double>(pred_c) : 0.0;
    r.recall[c] = r.support[c] ? static_cast<double>(tp) / static_cast<double>(r.support[c]) : 0.0;
    const double pr = r.precision[c] + r.recall[c];
    r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
    r.waf1 += static_cast<double>(r.support[c]) / static_cast<double>(r.n) * r.f1[c];
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);
  return r;
}

/// Σ_k (support_k / N)·F1_k
inline double waf1(std::span<const int> preds, std::span<const int> labels) {
  int k = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) k = std::max({k, preds[i] + 1, labels[i] + 1});
  return evaluate(preds, labels, k).waf1;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"n", r.n},
          {"n_classes", r.n_classes},
          {"accuracy", r.accuracy},
          {"waf1", r.waf1},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"support", r.support},
          {"confusion", r.confusion}};
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank, exact

/// Average ranks of |x| (1-based), ties share the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(x[a]) < std::abs(x[b]); });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && std::abs(x[idx[j + 1]]) == std::abs(x[idx[i]])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

struct WilcoxonResult {
  double w = 0.0;  // sum of ranks of positive differences
  double p = 1.0;
  std::size_t n = 0;  // nonzero differences
  double z = 0.0;     // normal approximation, reported for effect sizes
};

inline constexpr std::size_t kMaxExactWilcoxon = 20;

/// One-sided ("greater") exact test: p = P(W' ≥ W) over all 2^N sign assignments.
inline WilcoxonResult wilcoxon_signed_rank_exact(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double v : diffs)
    if (v != 0.0) d.push_back(v);
  if (d.empty()) throw std::invalid_argument("wilcoxon: all differences are zero");
  if (d.size() > kMaxExactWilcoxon) throw std::invalid_argument("wilcoxon: exact enumeration supports N <= 20");
  const auto ranks = average_ranks(d);
  WilcoxonResult r;
  r.n = d.size();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) r.w += ranks[i];
  // doubled ranks are integers even with ties
  std::vector<long> twice(ranks.size());
  long total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) total += twice[i] = std::lround(2.0 * ranks[i]);
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  for (long t : twice)
    for (long s = total; s >= t; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - t)];
  const long w2 = std::lround(2.0 * r.w);
  double tail = 0.0;
  for (long s = w2; s <= total; ++s) tail += count[static_cast<std::size_t>(s)];
  r.p = tail / std::ldexp(1.0, static_cast<int>(r.n));

  const double n = static_cast<double>(r.n);
  double var = n * (n + 1) * (2 * n + 1) / 24.0;
  std::vector<double> sorted = ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size();) {  // tie correction
    std::size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    var -= (t * t * t - t) / 48.0;
    i = j + 1;
  }
  r.z = (r.w - n * (n + 1) / 4.0) / std::sqrt(var);
  return r;
}

/// r = Z / √N
inline double rank_biserial(double z, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rank_biserial: N must be positive");
  return z / std::sqrt(static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// 2-D PCA export and centroid distances

struct Projection {
  Eigen::MatrixXd coords;      // N × 2
  Eigen::MatrixXd components;  // dim × 2, unit columns
  Eigen::VectorXd eigenvalues; // all covariance eigenvalues, descending
};

/// Top-2 principal directions of centred rows; each direction's largest-|loading| entry is positive.
inline Projection pca_2d(const Eigen::MatrixXd& x) {
  if (x.rows() < 3 || x.cols() < 2) throw std::invalid_argument("pca_2d: need at least 3 samples of dimension >= 2");
  Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(x.rows());
  if (cov.trace() <= 0.0) throw std::invalid_argument("pca_2d: input has zero variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::Index d = cov.rows();
  Projection p;
  p.eigenvalues = es.eigenvalues().reverse();
  p.components.resize(d, 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.col(k) = v;
  }
  p.coords = c * p.components;
  return p;
}

inline void write_projection_csv(std::ostream& os, const Projection& p, const std::vector<int>& labels,
                                 const std::string& tag, const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n";
  os << "x,y,label,tag\n";
  char buf[96];
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,", p.coords(i, 0), p.coords(i, 1));
    os << buf << labels[static_cast<std::size_t>(i)] << "," << tag << "\n";
  }
}

struct CentroidErrors {
  std::vector<std::optional<double>> per_class;  // absent when a class has no recovered samples
  double mean = 0.0;                             // over present classes
};

/// Per class ‖mean(recovered_k) − mean(original_k)‖₂.
inline CentroidErrors centroid_recovery_error(const Eigen::MatrixXd& recovered, const Eigen::MatrixXd& originals,
                                              const std::vector<int>& labels, int n_classes) {
  if (recovered.rows() != originals.rows() || recovered.cols() != originals.cols() ||
      static_cast<std::size_t>(recovered.rows()) != labels.size()) {
    throw std::invalid_argument("centroid_recovery_error: recovered, originals and labels must align");
  }
  CentroidErrors out;
  out.per_class.resize(static_cast<std::size_t>(n_classes));
  std::size_t present = 0;
  for (int k = 0; k < n_classes; ++k) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(recovered.cols()), b = a;
    std::size_t n = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) {
        a += recovered.row(static_cast<Eigen::Index>(i)).transpose();
        b += originals.row(static_cast<Eigen::Index>(i)).transpose();
        ++n;
      }
    if (!n) continue;
    const double dist = ((a - b) / static_cast<double>(n)).norm();
    out.per_class[static_cast<std::size_t>(k)] = dist;
    out.mean += dist;
    ++present;
  }
  if (present) out.mean /= static_cast<double>(present);
  return out;
}

}  // namespace fedrec::eval
