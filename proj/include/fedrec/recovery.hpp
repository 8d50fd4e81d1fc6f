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

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrec/classifier.hpp"
#include "fedrec/dgn.hpp"
#include "fedrec/dialogue.hpp"
#include "fedrec/discdiff.hpp"
#include "fedrec/scn.hpp"

namespace fedrec {

/// Utterances of a set of conversations flattened in order, with the frozen
/// z^D ‖ z^S condition rows for recovering each modality.
struct SplitView {
  std::vector<int> labels;
  std::vector<ModalitySet> avail;
  std::array<numkit::Tensor, kNumModalities> h;          // (N × d) true latents
  std::array<numkit::Tensor, kNumModalities> cond;       // (N × 2(3d+3)) built with m hidden
  std::array<std::vector<bool>, kNumModalities> has_cond;

  std::size_t size() const { return labels.size(); }

  std::vector<std::size_t> rows_missing(Modality m) const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < avail.size(); ++i)
      if (!avail[i].contains(m)) r.push_back(i);
    return r;
  }
  std::vector<std::size_t> rows_with(Modality m) const {
    std::vector<std::size_t> r;
    for (std::size_t i = 0; i < avail.size(); ++i)
      if (avail[i].contains(m)) r.push_back(i);
    return r;
  }
};

/// z^D ‖ z^S of one conversation; the target modality must already be hidden.
/// Returns false when no modality is left to condition on.
inline bool condition_rows(const ConvBatch& b, const numkit::ParameterSet& dgn_p, const numkit::ParameterSet& scn_p,
                           const nn::ModelDims& dims, numkit::Tensor& out) {
  ModalitySet any;
  for (auto a : b.avail) any = any | a;
  out = numkit::Tensor::matrix(b.size(), dims.condition_width());
  if (any.empty()) return false;
  numkit::Tape tape(false);
  numkit::Bound bd(tape, dgn_p), bs(tape, scn_p);
  auto zd = dgn::dgn_forward(tape, bd, dims, b.graph, b.h, b.avail).z_d;
  auto zs = scn::scn_forward(tape, bs, dims, b.h, b.avail).z_s;
  out = numkit::concat_cols({zd, zs}).value();
  return true;
}

inline SplitView build_split_view(const std::vector<ConvBatch>& batches, const numkit::ParameterSet& dgn_p,
                                  const numkit::ParameterSet& scn_p, const nn::ModelDims& dims) {
  SplitView v;
  std::size_t n = 0;
  for (const auto& b : batches) n += b.size();
  for (auto& t : v.h) t = numkit::Tensor::matrix(std::max<std::size_t>(n, 1), dims.d);
  for (auto& t : v.cond) t = numkit::Tensor::matrix(std::max<std::size_t>(n, 1), dims.condition_width());
  std::size_t row = 0;
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      v.labels.push_back(b.labels[i]);
      v.avail.push_back(b.avail[i]);
      for (std::size_t m = 0; m < kNumModalities; ++m)
        for (std::size_t k = 0; k < dims.d; ++k) v.h[m](row + i, k) = b.h[m](i, k);
    }
    for (Modality m : kAllModalities) {
      const std::size_t mi = index_of(m);
      ConvBatch hidden = without_modality(b, m);
      numkit::Tensor rows;
      const bool ok = condition_rows(hidden, dgn_p, scn_p, dims, rows);
      for (std::size_t i = 0; i < b.size(); ++i) {
        v.has_cond[mi].push_back(ok && !hidden.avail[i].empty());
        for (std::size_t k = 0; k < dims.condition_width(); ++k) v.cond[mi](row + i, k) = rows(i, k);
      }
    }
    row += b.size();
  }
  return v;
}

inline numkit::Tensor select_rows(const numkit::Tensor& t, const std::vector<std::size_t>& rows) {
  numkit::Tensor out = numkit::Tensor::matrix(std::max<std::size_t>(rows.size(), 1), t.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < t.cols(); ++k) out(r, k) = t(rows[r], k);
  return out;
}

/// Diffusion training set for modality m: rows where m is observed.
inline diff::DiffusionData diffusion_data(const SplitView& v, Modality m) {
  const auto rows = v.rows_with(m);
  diff::DiffusionData d;
  if (rows.empty()) return d;
  d.z0 = select_rows(v.h[index_of(m)], rows);
  d.cond = select_rows(v.cond[index_of(m)], rows);
  for (auto r : rows) d.has_cond.push_back(v.has_cond[index_of(m)][r]);
  return d;
}

/// Recovered latents for the rows of v missing m (row order of rows_missing).
inline numkit::Tensor recover_rows(const SplitView& v, Modality m, const numkit::ParameterSet& theta,
                                   const nn::ModelDims& dims, const diff::SamplerConfig& sc,
                                   const diff::NoiseSchedule& sched, std::uint64_t seed) {
  const auto rows = v.rows_missing(m);
  if (rows.empty()) return {};
  numkit::Tensor cond = select_rows(v.cond[index_of(m)], rows);
  std::vector<bool> has;
  for (auto r : rows) has.push_back(v.has_cond[index_of(m)][r]);
  numkit::Rng rng(seed);
  return diff::sample_latents(theta, m, dims, cond, has, sc, sched, rng);
}

/// How missing latents are filled before classification.
enum class RecoveryMode { kDiffusion, kZero };

/// Full three-modality features: observed latents kept, missing rows filled by
/// `recovered[m]` (rows_missing order) or zeros.
inline cls::Features assemble_features(const SplitView& v, const std::array<numkit::Tensor, kNumModalities>& recovered,
                                       RecoveryMode mode) {
  cls::Features x;
  for (Modality m : kAllModalities) {
    const std::size_t mi = index_of(m);
    x[mi] = v.h[mi];
    const auto rows = v.rows_missing(m);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t k = 0; k < x[mi].cols(); ++k)
        x[mi](rows[r], k) = mode == RecoveryMode::kZero ? 0.0 : recovered[mi](r, k);
  }
  return x;
}

/// Builds c from the available modalities, samples every missing modality
/// with its global model and returns the completed feature set.
/// Throws when a needed model is absent.
inline cls::Features recover_modality(const SplitView& v, const std::array<const numkit::ParameterSet*, kNumModalities>& thetas,
                                      const nn::ModelDims& dims, const diff::SamplerConfig& sc,
                                      const diff::NoiseSchedule& sched, std::uint64_t seed) {
  std::array<numkit::Tensor, kNumModalities> rec;
  for (Modality m : kAllModalities) {
    if (v.rows_missing(m).empty()) continue;
    if (!thetas[index_of(m)]) {
      throw std::invalid_argument(std::string("no global diffusion model for missing modality ") + modality_key(m));
    }
    rec[index_of(m)] = recover_rows(v, m, *thetas[index_of(m)], dims, sc, sched, numkit::derive_seed(seed, index_of(m)));
  }
  return assemble_features(v, rec, RecoveryMode::kDiffusion);
}

}  // namespace fedrec
