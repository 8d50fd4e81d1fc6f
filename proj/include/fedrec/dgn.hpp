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
#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrec/corpus/corpus.hpp"
#include "fedrec/modality.hpp"
#include "fedrec/nn.hpp"
#include "fedrec/numkit/tape.hpp"

namespace fedrec::dgn {

using numkit::Bound;
using numkit::ParameterSet;
using numkit::Tensor;
using numkit::Var;

// Speaker relation of edge i -> j. Same speaker covers self edges; for two
// speakers this is exactly {i->j, j->i, i->i}.
enum class SpeakerRelation : std::uint8_t { kSame = 0, kCrossForward = 1, kCrossBackward = 2 };
// Context relation: forward points to a later utterance (j > i).
enum class ContextRelation : std::uint8_t { kForward = 0, kPresent = 1, kBackward = 2 };

inline constexpr std::size_t kNumRelations = 3;

enum class RelationKind { kSpeaker, kContext };

struct Edge {
  std::size_t from = 0;  // 0-based i
  std::size_t to = 0;    // 0-based j
  SpeakerRelation speaker = SpeakerRelation::kSame;
  ContextRelation context = ContextRelation::kPresent;

  bool operator==(const Edge&) const = default;
};

struct DialogueGraph {
  std::size_t nodes = 0;
  std::size_t window = 1;
  std::vector<Edge> edges;  // grouped by source node, targets ascending

  std::size_t relation_of(const Edge& e, RelationKind kind) const {
    return kind == RelationKind::kSpeaker ? static_cast<std::size_t>(e.speaker) : static_cast<std::size_t>(e.context);
  }
};

/// Window-bounded graph: i connects to every j in [max(i-w,1), min(i+w,𝒞)], itself included.
inline DialogueGraph build_dialogue_graph(std::span<const int> speakers, std::size_t window) {
  if (window < 1) throw std::invalid_argument("dialogue graph window must be at least 1");
  if (speakers.empty()) throw std::invalid_argument("dialogue graph needs at least one utterance");
  DialogueGraph g;
  g.nodes = speakers.size();
  g.window = window;
  for (std::size_t i = 0; i < g.nodes; ++i) {
    const std::size_t lo = i >= window ? i - window : 0;
    const std::size_t hi = std::min(i + window, g.nodes - 1);
    for (std::size_t j = lo; j <= hi; ++j) {
      Edge e{i, j};
      if (j > i) e.context = ContextRelation::kForward;
      else if (j < i) e.context = ContextRelation::kBackward;
      else e.context = ContextRelation::kPresent;
      if (speakers[i] == speakers[j]) e.speaker = SpeakerRelation::kSame;
      else e.speaker = j > i ? SpeakerRelation::kCrossForward : SpeakerRelation::kCrossBackward;
      g.edges.push_back(e);
    }
  }
  return g;
}

inline DialogueGraph build_dialogue_graph(const corpus::Conversation& conv, std::size_t window) {
  std::vector<int> speakers;
  for (const auto& u : conv.utterances) speakers.push_back(u.speaker);
  return build_dialogue_graph(speakers, window);
}

/// Row-normalized adjacency per relation: A_r[i][j] = 1/|N_i^r| for j in N_i^r.
/// Nodes with available[j] == false are dropped from every neighbourhood.
inline std::array<Tensor, kNumRelations> relation_adjacency(const DialogueGraph& g, RelationKind kind,
                                                           const std::vector<bool>& available) {
  std::array<Tensor, kNumRelations> adj;
  for (auto& a : adj) a = Tensor::matrix(g.nodes, g.nodes);
  std::array<std::vector<std::size_t>, kNumRelations> deg;
  for (auto& d : deg) d.assign(g.nodes, 0);
  for (const Edge& e : g.edges) {
    if (!available[e.to]) continue;
    const std::size_t r = g.relation_of(e, kind);
    adj[r](e.from, e.to) = 1.0;
    ++deg[r][e.from];
  }
  for (std::size_t r = 0; r < kNumRelations; ++r)
    for (std::size_t i = 0; i < g.nodes; ++i)
      if (deg[r][i])
        for (std::size_t j = 0; j < g.nodes; ++j) adj[r](i, j) /= static_cast<double>(deg[r][i]);
  return adj;
}

/// Single-layer relational graph convolution:
/// v_i = ReLU( Σ_r Σ_{j∈N_i^r} (1/|N_i^r|) W_r h_j ), W_r applied to column vectors.
/// Rows of unavailable nodes are zero.
inline Var rgcn_layer(const DialogueGraph& g, Var h, std::span<const Var> relation_weights, RelationKind kind,
                      const std::vector<bool>& available) {
  using namespace numkit;
  if (relation_weights.size() != kNumRelations) {
    throw std::invalid_argument("rgcn_layer: expected " + std::to_string(kNumRelations) + " relation weights, got " +
                                std::to_string(relation_weights.size()));
  }
  if (h.rows() != g.nodes) throw ShapeError("rgcn_layer: feature rows do not match graph size");
  const auto adj = relation_adjacency(g, kind, available);
  Var acc;
  bool first = true;
  Tape& t = *h.tape;
  for (std::size_t r = 0; r < kNumRelations; ++r) {
    Var term = matmul_nt(matmul(t.constant(adj[r]), h), relation_weights[r]);
    acc = first ? term : add(acc, term);
    first = false;
  }
  std::vector<double> keep(g.nodes);
  for (std::size_t i = 0; i < g.nodes; ++i) keep[i] = available[i] ? 1.0 : 0.0;
  return scale_rows(relu(acc), std::move(keep));
}

inline std::vector<bool> all_available(std::size_t n) { return std::vector<bool>(n, true); }

inline std::string relation_param(Modality m, RelationKind kind, std::size_t r) {
  return std::string("dgn.") + modality_key(m) + (kind == RelationKind::kSpeaker ? ".spk." : ".ctx.") +
         std::to_string(r);
}

inline ParameterSet init_dgn_params(const nn::ModelDims& dims, numkit::Rng& rng) {
  dims.validate();
  ParameterSet p;
  for (Modality m : kAllModalities)
    for (auto kind : {RelationKind::kSpeaker, RelationKind::kContext})
      for (std::size_t r = 0; r < kNumRelations; ++r) p.add_weight(relation_param(m, kind, r), dims.d, dims.d, rng);
  nn::add_linear(p, "dgn.in", dims.flagged_width(), dims.d, rng);
  nn::add_attention(p, "dgn.attn", dims.d, rng, /*output_projection=*/true);
  nn::add_linear(p, "dgn.mlp1", dims.d, dims.mlp_hidden, rng);
  nn::add_linear(p, "dgn.mlp2", dims.mlp_hidden, static_cast<std::size_t>(dims.n_classes), rng);
  return p;
}

/// Availability flags as a constant (𝒞 × 3) block.
inline Tensor availability_flags(std::span<const ModalitySet> avail) {
  Tensor f = Tensor::matrix(avail.size(), kNumModalities);
  for (std::size_t i = 0; i < avail.size(); ++i)
    for (Modality m : kAllModalities) f(i, index_of(m)) = avail[i].contains(m) ? 1.0 : 0.0;
  return f;
}

struct DgnOutput {
  std::array<Var, kNumModalities> z;  // (𝒞 × d); zeros where the modality is unavailable
  Var z_d;                            // (𝒞 × 3d+3): z^l | z^v | z^a | flags
  Var logits;                         // (𝒞 × c)
};

/// Per available modality z^m = rgcn(speaker) + rgcn(context); fixed-width
/// concatenation, self-attention across the conversation, then an MLP.
inline DgnOutput dgn_forward(numkit::Tape& tape, const Bound& p, const nn::ModelDims& dims, const DialogueGraph& g,
                             const std::array<Tensor, kNumModalities>& latents, std::span<const ModalitySet> avail) {
  using namespace numkit;
  if (avail.size() != g.nodes) throw ShapeError("dgn_forward: availability does not match graph");
  ModalitySet any;
  for (auto a : avail) any = any | a;
  if (any.empty()) throw std::invalid_argument("dgn_forward: batch has no available modality");

  DgnOutput out;
  for (Modality m : kAllModalities) {
    const std::size_t mi = index_of(m);
    if (!any.contains(m)) {
      out.z[mi] = tape.constant(Tensor::matrix(g.nodes, dims.d));
      continue;
    }
    std::vector<bool> present(g.nodes);
    Tensor h = latents[mi];
    for (std::size_t i = 0; i < g.nodes; ++i) {
      present[i] = avail[i].contains(m);
      if (!present[i])
        for (std::size_t k = 0; k < h.cols(); ++k) h(i, k) = 0.0;
    }
    Var hv = tape.constant(std::move(h));
    std::array<Var, kNumRelations> ws, wc;
    for (std::size_t r = 0; r < kNumRelations; ++r) {
      ws[r] = p[relation_param(m, RelationKind::kSpeaker, r)];
      wc[r] = p[relation_param(m, RelationKind::kContext, r)];
    }
    Var vs = rgcn_layer(g, hv, ws, RelationKind::kSpeaker, present);
    Var vc = rgcn_layer(g, hv, wc, RelationKind::kContext, present);
    out.z[mi] = add(vs, vc);
  }
  out.z_d = concat_cols({out.z[0], out.z[1], out.z[2], tape.constant(availability_flags(avail))});
  Var x = nn::linear(p, "dgn.in", out.z_d);
  x = add(x, nn::attention(p, "dgn.attn", x, x, /*groups=*/1, dims.heads));
  out.logits = nn::linear(p, "dgn.mlp2", relu(nn::linear(p, "dgn.mlp1", x)));
  return out;
}

/// −(1/𝒞) Σ log ŷ_d[i, y_i]
inline Var dgn_loss(Var logits, std::span<const int> labels) { return numkit::cross_entropy(logits, labels); }

}  // namespace fedrec::dgn
