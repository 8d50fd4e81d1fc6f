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
#include <string>
#include <vector>

#include "fedrec/numkit/params.hpp"
#include "fedrec/numkit/tape.hpp"

namespace fedrec::nn {

using numkit::Bound;
using numkit::ParameterSet;
using numkit::Rng;
using numkit::Tensor;
using numkit::Var;

/// Dimensions shared by every network in a run.
struct ModelDims {
  std::size_t d = 64;      // shared latent width
  std::size_t s_tok = 4;   // tokens per latent
  std::size_t p_tok = 16;  // token width; s_tok * p_tok == d
  std::size_t heads = 2;   // dialogue-head attention heads
  std::size_t mlp_hidden = 64;
  int n_classes = 4;

  std::size_t flagged_width() const { return 3 * d + 3; }
  std::size_t condition_width() const { return 2 * flagged_width(); }
  void validate() const {
    if (s_tok * p_tok != d) throw std::invalid_argument("token layout s_tok*p_tok must equal d");
    if (heads == 0 || d % heads) throw std::invalid_argument("heads must divide d");
    if (n_classes < 1) throw std::invalid_argument("n_classes must be positive");
  }
};

inline void add_linear(ParameterSet& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       double gain = 1.0) {
  p.add_weight(name + ".w", in, out, rng, gain);
  p.add_bias(name + ".b", out);
}

/// x·W + b
inline Var linear(const Bound& p, const std::string& name, Var x) {
  return numkit::add_bias(numkit::matmul(x, p[name + ".w"]), p[name + ".b"]);
}

inline void add_attention(ParameterSet& p, const std::string& name, std::size_t width, Rng& rng,
                          bool output_projection = false) {
  p.add_weight(name + ".q", width, width, rng);
  p.add_weight(name + ".k", width, width, rng);
  p.add_weight(name + ".v", width, width, rng);
  if (output_projection) p.add_weight(name + ".o", width, width, rng);
}

/// Scaled dot-product attention computed independently inside each of
/// `groups` row blocks. q_in is (G·sq × w), kv_in is (G·sk × w).
inline Var attention(const Bound& p, const std::string& name, Var q_in, Var kv_in, std::size_t groups,
                     std::size_t heads = 1) {
  using namespace numkit;
  Var q = matmul(q_in, p[name + ".q"]);
  Var k = matmul(kv_in, p[name + ".k"]);
  Var v = matmul(kv_in, p[name + ".v"]);
  const std::size_t width = q.cols();
  const std::size_t hd = width / heads;
  const double scale_f = 1.0 / std::sqrt(static_cast<double>(hd));
  Var out;
  if (heads == 1) {
    Var w = softmax_rows(scale(group_matmul_nt(q, k, groups), scale_f));
    out = group_matmul(w, v, groups);
  } else {
    std::vector<Var> parts;
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(q, h * hd, (h + 1) * hd);
      Var kh = slice_cols(k, h * hd, (h + 1) * hd);
      Var vh = slice_cols(v, h * hd, (h + 1) * hd);
      Var w = softmax_rows(scale(group_matmul_nt(qh, kh, groups), scale_f));
      parts.push_back(group_matmul(w, vh, groups));
    }
    out = concat_cols(parts);
  }
  if (p.contains(name + ".o")) out = matmul(out, p[name + ".o"]);
  return out;
}

/// Norm(q + Attn(q, kv)).
inline Var attention_block(const Bound& p, const std::string& name, Var q_in, Var kv_in, std::size_t groups,
                           std::size_t heads = 1) {
  return numkit::layer_norm_rows(numkit::add(q_in, attention(p, name, q_in, kv_in, groups, heads)));
}

/// Row indices that repeat each of `n` rows `times` times consecutively.
inline std::vector<std::size_t> repeat_index(std::size_t n, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(n * times);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < times; ++k) idx.push_back(i);
  return idx;
}

/// Row indices that tile a block of `block` rows `times` times.
inline std::vector<std::size_t> tile_index(std::size_t block, std::size_t times) {
  std::vector<std::size_t> idx;
  idx.reserve(block * times);
  for (std::size_t k = 0; k < times; ++k)
    for (std::size_t i = 0; i < block; ++i) idx.push_back(i);
  return idx;
}

/// Interleaves per-group token blocks: parts[j] is (G·s_j × w); result groups
/// rows as [part0 group g, part1 group g, ...] for each g.
inline Var interleave_groups(const std::vector<Var>& parts, std::size_t groups) {
  std::vector<std::size_t> sizes, offsets;
  std::size_t off = 0;
  for (const Var& v : parts) {
    sizes.push_back(v.rows() / groups);
    offsets.push_back(off);
    off += v.rows();
  }
  std::vector<std::size_t> idx;
  idx.reserve(off);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < parts.size(); ++j)
      for (std::size_t r = 0; r < sizes[j]; ++r) idx.push_back(offsets[j] + g * sizes[j] + r);
  return numkit::gather_rows(numkit::concat_rows(parts), std::move(idx));
}

}  // namespace fedrec::nn
