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
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrec/modality.hpp"
#include "fedrec/nn.hpp"
#include "fedrec/numkit/optim.hpp"
#include "fedrec/numkit/rng.hpp"
#include "fedrec/numkit/tape.hpp"

namespace fedrec::cls {

using numkit::Bound;
using numkit::ParameterSet;
using numkit::Tensor;
using numkit::Var;

inline std::string mod(Modality m) { return std::string(1, modality_key(m)); }

/// φ: per-modality cross-attention against the other two modalities, one
/// self-attention layer over all 3·s tokens, then an MLP over the flattened tokens.
inline ParameterSet init_classifier_params(const nn::ModelDims& dims, numkit::Rng& rng) {
  dims.validate();
  ParameterSet p;
  for (Modality m : kAllModalities) p.add("cls." + mod(m) + ".tok", rng.normal_tensor({dims.s_tok, dims.p_tok}, 0.1));
  for (Modality m : kAllModalities) nn::add_attention(p, "cls.x." + mod(m), dims.p_tok, rng);
  nn::add_attention(p, "cls.self", dims.p_tok, rng);
  nn::add_linear(p, "cls.mlp1", 3 * dims.d, dims.mlp_hidden, rng);
  nn::add_linear(p, "cls.mlp2", dims.mlp_hidden, static_cast<std::size_t>(dims.n_classes), rng);
  return p;
}

/// Full three-modality latent set, one (N × d) matrix per modality.
using Features = std::array<Tensor, kNumModalities>;

inline Var classify(numkit::Tape& tape, const Bound& p, const nn::ModelDims& dims, const Features& x) {
  using namespace numkit;
  const std::size_t n = x[0].empty() ? 0 : x[0].rows();
  for (Modality m : kAllModalities) {
    const Tensor& t = x[index_of(m)];
    if (t.empty()) throw std::invalid_argument(std::string("classify: modality ") + modality_key(m) + " is missing; recover it first");
    if (t.rows() != n || t.cols() != dims.d) throw ShapeError("classify: latent block " + shape_string(t.shape()));
  }
  std::array<Var, kNumModalities> tok;
  for (Modality m : kAllModalities) {
    Var t = reshape(tape.constant(x[index_of(m)]), {n * dims.s_tok, dims.p_tok});
    tok[index_of(m)] = add(t, gather_rows(p["cls." + mod(m) + ".tok"], nn::tile_index(dims.s_tok, n)));
  }
  std::array<Var, kNumModalities> fused;
  for (Modality m : kAllModalities) {
    std::vector<Var> others;
    for (Modality o : kAllModalities)
      if (o != m) others.push_back(tok[index_of(o)]);
    Var kv = nn::interleave_groups(others, n);
    fused[index_of(m)] = nn::attention_block(p, "cls.x." + mod(m), tok[index_of(m)], kv, n);
  }
  Var all = nn::interleave_groups({fused[0], fused[1], fused[2]}, n);
  Var z = nn::attention_block(p, "cls.self", all, all, n);
  Var flat = reshape(z, {n, 3 * dims.d});
  return nn::linear(p, "cls.mlp2", relu(nn::linear(p, "cls.mlp1", flat)));
}

/// Inference-only logits.
inline Tensor predict_logits(const ParameterSet& params, const nn::ModelDims& dims, const Features& x) {
  numkit::Tape tape(false);
  Bound b(tape, params);
  return classify(tape, b, dims, x).value();
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k)
      if (logits(i, k) > logits(i, best)) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

struct ClassifierConfig {
  std::size_t batch = 32;
  double lr = 2e-3;
};

inline Features gather(const Features& x, const std::vector<std::size_t>& idx) {
  Features out;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    out[m] = Tensor::matrix(idx.size(), x[m].cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t k = 0; k < x[m].cols(); ++k) out[m](r, k) = x[m](idx[r], k);
  }
  return out;
}

/// `epochs` passes of minibatch Adam on cross-entropy; returns the last epoch's mean loss.
inline double train_classifier(ParameterSet& params, const nn::ModelDims& dims, const Features& x,
                               const std::vector<int>& labels, std::size_t epochs, const ClassifierConfig& cfg,
                               numkit::Rng& rng) {
  if (labels.empty() || epochs == 0) return 0.0;
  numkit::Adam opt({cfg.lr});
  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double last = 0.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0, count = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + cfg.batch)));
      std::vector<int> y(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) y[r] = labels[idx[r]];
      numkit::Tape tape;
      Bound b(tape, params);
      Var loss = numkit::cross_entropy(classify(tape, b, dims, gather(x, idx)), y);
      const double l = loss.value()[0];
      if (!std::isfinite(l)) throw numkit::NumericalError("classifier loss is not finite");
      tape.backward(loss);
      opt.step(params, b.gradients());
      total += l * static_cast<double>(idx.size());
      count += static_cast<double>(idx.size());
    }
    last = total / count;
  }
  return last;
}

}  // namespace fedrec::cls
