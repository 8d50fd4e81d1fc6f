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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrec/dgn.hpp"
#include "fedrec/modality.hpp"
#include "fedrec/nn.hpp"

namespace fedrec::scn {

using numkit::Bound;
using numkit::ParameterSet;
using numkit::Tensor;
using numkit::Var;

inline std::string mod(Modality m) { return std::string(1, modality_key(m)); }
inline std::string pair_name(Modality q, Modality kv) { return "scn.x." + mod(q) + mod(kv); }

inline ParameterSet init_scn_params(const nn::ModelDims& dims, numkit::Rng& rng) {
  dims.validate();
  ParameterSet p;
  p.add("scn.pos", rng.normal_tensor({dims.s_tok, dims.p_tok}, 0.1));
  for (Modality m : kAllModalities) nn::add_linear(p, "scn." + mod(m) + ".embed", dims.d, dims.d, rng);
  for (Modality q : kAllModalities)
    for (Modality kv : kAllModalities)
      if (q != kv) nn::add_attention(p, pair_name(q, kv), dims.p_tok, rng);
  for (Modality m : kAllModalities) nn::add_attention(p, "scn.self." + mod(m), dims.p_tok, rng);
  for (Modality m : kAllModalities) nn::add_linear(p, "scn." + mod(m) + ".summary", dims.p_tok, dims.d, rng);
  nn::add_linear(p, "scn.mlp1", dims.flagged_width(), dims.mlp_hidden, rng);
  nn::add_linear(p, "scn.mlp2", dims.mlp_hidden, static_cast<std::size_t>(dims.n_classes), rng);
  return p;
}

/// z = Norm(q + CrossAttn(q, kv)), attention within each of `groups` token blocks.
inline Var cross_attention(const Bound& p, const std::string& name, Var q_seq, Var kv_seq, std::size_t groups) {
  if (q_seq.cols() != kv_seq.cols()) {
    throw numkit::ShapeError("cross_attention: token widths differ (" + std::to_string(q_seq.cols()) + " vs " +
                             std::to_string(kv_seq.cols()) + ")");
  }
  return nn::attention_block(p, name, q_seq, kv_seq, groups);
}

struct ScnOutput {
  std::array<Var, kNumModalities> z_self;   // (𝒞·s × p); unset for modalities absent from the batch
  std::array<Var, kNumModalities> head;     // s^m = z_self^m[token 0], (𝒞 × p)
  std::array<Var, kNumModalities> summary;  // s^m lifted to width d; zero rows where unavailable
  Var z_s;                                  // (𝒞 × 3d+3)
  Var logits;
};

/// Token sequences for one modality: reshape(Linear(h)) + token index embedding.
inline Var tokens_for(numkit::Tape& tape, const Bound& p, const nn::ModelDims& dims, Modality m, const Tensor& h) {
  using namespace numkit;
  const std::size_t n = h.rows();
  Var e = nn::linear(p, "scn." + mod(m) + ".embed", tape.constant(h));
  Var tok = reshape(e, {n * dims.s_tok, dims.p_tok});
  return add(tok, gather_rows(p["scn.pos"], nn::tile_index(dims.s_tok, n)));
}

/// For each available modality: mean of cross-attention against every available
/// partner (identity when there is none), self-attention refinement, head token.
inline ScnOutput scn_forward(numkit::Tape& tape, const Bound& p, const nn::ModelDims& dims,
                             const std::array<Tensor, kNumModalities>& latents, std::span<const ModalitySet> avail) {
  using namespace numkit;
  const std::size_t n = avail.size();
  if (n == 0) throw std::invalid_argument("scn_forward: empty batch");
  ModalitySet any;
  for (auto a : avail) any = any | a;
  if (any.empty()) throw std::invalid_argument("scn_forward: batch has no available modality");
  const std::size_t s = dims.s_tok;

  std::array<Var, kNumModalities> tokens;
  for (Modality m : any.members()) {
    Tensor h = latents[index_of(m)];
    for (std::size_t i = 0; i < n; ++i)
      if (!avail[i].contains(m))
        for (std::size_t k = 0; k < h.cols(); ++k) h(i, k) = 0.0;
    tokens[index_of(m)] = tokens_for(tape, p, dims, m, h);
  }

  ScnOutput out;
  for (Modality m : kAllModalities) {
    const std::size_t mi = index_of(m);
    if (!any.contains(m)) {
      out.summary[mi] = tape.constant(Tensor::matrix(n, dims.d));
      continue;
    }
    // per-row mixing weights over partners
    std::vector<Var> terms;
    std::vector<double> self_w(n * s, 0.0);
    std::array<std::vector<double>, kNumModalities> pair_w;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t partners = 0;
      for (Modality o : kAllModalities)
        if (o != m && avail[i].contains(m) && avail[i].contains(o)) ++partners;
      for (Modality o : kAllModalities) {
        if (o == m) continue;
        auto& w = pair_w[index_of(o)];
        if (w.empty()) w.assign(n * s, 0.0);
        const double v = (partners && avail[i].contains(m) && avail[i].contains(o)) ? 1.0 / static_cast<double>(partners) : 0.0;
        for (std::size_t k = 0; k < s; ++k) w[i * s + k] = v;
      }
      if (!partners)
        for (std::size_t k = 0; k < s; ++k) self_w[i * s + k] = 1.0;
    }
    for (Modality o : kAllModalities) {
      if (o == m || !any.contains(o)) continue;
      const auto& w = pair_w[index_of(o)];
      bool used = false;
      for (double v : w) used = used || v != 0.0;
      if (!used) continue;
      Var z = cross_attention(p, pair_name(m, o), tokens[mi], tokens[index_of(o)], n);
      terms.push_back(scale_rows(z, w));
    }
    bool any_self = false;
    for (double v : self_w) any_self = any_self || v != 0.0;
    Var fused;
    if (terms.empty()) {
      fused = tokens[mi];
    } else {
      fused = terms[0];
      for (std::size_t k = 1; k < terms.size(); ++k) fused = add(fused, terms[k]);
      if (any_self) fused = add(fused, scale_rows(tokens[mi], self_w));
    }
    out.z_self[mi] = nn::attention_block(p, "scn.self." + mod(m), fused, fused, n);
    std::vector<std::size_t> heads(n);
    for (std::size_t i = 0; i < n; ++i) heads[i] = i * s;
    out.head[mi] = gather_rows(out.z_self[mi], heads);
    std::vector<double> keep(n);
    for (std::size_t i = 0; i < n; ++i) keep[i] = avail[i].contains(m) ? 1.0 : 0.0;
    out.summary[mi] = scale_rows(nn::linear(p, "scn." + mod(m) + ".summary", out.head[mi]), std::move(keep));
  }
  out.z_s = concat_cols({out.summary[0], out.summary[1], out.summary[2], tape.constant(dgn::availability_flags(avail))});
  out.logits = nn::linear(p, "scn.mlp2", relu(nn::linear(p, "scn.mlp1", out.z_s)));
  return out;
}

inline Var scn_loss(Var logits, std::span<const int> labels) { return numkit::cross_entropy(logits, labels); }

}  // namespace fedrec::scn
