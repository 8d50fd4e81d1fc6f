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
#include <string>
#include <vector>

#include "fedrec/config.hpp"
#include "fedrec/corpus/corpus.hpp"
#include "fedrec/corpus/partition.hpp"
#include "fedrec/dgn.hpp"
#include "fedrec/dialogue.hpp"
#include "fedrec/encoder.hpp"
#include "fedrec/evalstats.hpp"
#include "fedrec/fedcore.hpp"
#include "fedrec/pretrain.hpp"
#include "fedrec/recovery.hpp"
#include "fedrec/scn.hpp"

namespace fedrec::exp {

using config::RunConfig;
using numkit::ParameterSet;

/// Data, shards and pretrained per-client DGN/SCN: everything before federation.
struct Prepared {
  RunConfig cfg;
  corpus::Corpus corpus;
  std::vector<corpus::ClientDataset> shards;
  std::vector<ConversationLatents> latents;
  std::vector<ParameterSet> dgn, scn;
  std::vector<std::vector<scn::EpochLoss>> pretrain_log;
};

inline std::vector<corpus::ClientDataset> make_shards(const corpus::Corpus& c, const RunConfig& cfg) {
  auto shards = corpus::partition_clients(c, cfg.n_c, cfg.partition_seed());
  if (cfg.protocol == config::Protocol::kFixed) corpus::apply_fixed_protocol(shards, cfg.patterns);
  else corpus::apply_random_protocol(shards, cfg.eta, cfg.protocol_seed());
  return shards;
}

/// Shards and frozen-encoder latents; no pretrained networks yet.
inline Prepared prepare_data(const RunConfig& cfg, corpus::Corpus c) {
  if (c.n_classes != cfg.dims.n_classes) throw corpus::DataError("corpus class count differs from the model's");
  if (c.dims != cfg.corpus.modality_dims) throw corpus::DataError("corpus feature widths differ from the config's");
  Prepared p;
  p.cfg = cfg;
  p.corpus = std::move(c);
  p.shards = make_shards(p.corpus, cfg);
  p.latents = encode_corpus(p.corpus, make_encoder(p.corpus.dims, cfg.dims.d, cfg.encoder_seed()));
  return p;
}

/// Algorithm-1 pretraining of DGN/SCN on each client's training split. Parameters
/// are kept as stored in a checkpoint, so a reloaded run matches an in-process one.
inline void pretrain_clients(Prepared& p) {
  const auto& cfg = p.cfg;
  const std::size_t n = p.shards.size();
  p.dgn.assign(n, {});
  p.scn.assign(n, {});
  p.pretrain_log.assign(n, {});
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  fed::parallel_for(ids, cfg.federation.jobs, [&](std::size_t l) {
    // common initialization from the server; pretraining itself stays local
    numkit::Rng rng(numkit::derive_seed(cfg.pretrain.seed, 100));
    p.dgn[l] = dgn::init_dgn_params(cfg.dims, rng);
    p.scn[l] = scn::init_scn_params(cfg.dims, rng);
    auto train = make_batches(p.corpus, p.shards[l], p.shards[l].train, p.latents, cfg.window);
    scn::PretrainConfig pc = cfg.pretrain;
    pc.seed = numkit::derive_seed(cfg.pretrain.seed, l);
    p.pretrain_log[l] = scn::pretrain_joint(train, p.dgn[l], p.scn[l], cfg.dims, pc);
    p.dgn[l] = numkit::deserialize(numkit::serialize(p.dgn[l]));
    p.scn[l] = numkit::deserialize(numkit::serialize(p.scn[l]));
  });
}

inline Prepared prepare(const RunConfig& cfg, corpus::Corpus c) {
  Prepared p = prepare_data(cfg, std::move(c));
  pretrain_clients(p);
  return p;
}

/// Availability of every corpus utterance, in corpus order, as set by the client shards.
inline corpus::MissingMask global_mask(const Prepared& p) {
  std::vector<std::size_t> start(p.corpus.conversations.size() + 1, 0);
  for (std::size_t i = 0; i < p.corpus.conversations.size(); ++i) start[i + 1] = start[i] + p.corpus.conversations[i].size();
  corpus::MissingMask m = corpus::MissingMask::full(start.back());
  for (const auto& s : p.shards)
    for (std::size_t pos = 0; pos < s.conversations.size(); ++pos) {
      const std::size_t ci = s.conversations[pos];
      for (std::size_t u = 0; u < p.corpus.conversations[ci].size(); ++u) m.available[start[ci] + u] = s.availability(pos, u);
    }
  return m;
}

inline Prepared prepare(const RunConfig& cfg) { return prepare(cfg, corpus::generate_corpus(cfg.corpus)); }

inline SplitView view_of(const Prepared& p, std::size_t l, const corpus::ClientDataset& shard,
                         const std::vector<std::size_t>& positions) {
  return build_split_view(make_batches(p.corpus, shard, positions, p.latents, p.cfg.window), p.dgn[l], p.scn[l],
                          p.cfg.dims);
}

/// Federated clients with frozen condition rows for every split.
inline std::vector<fed::Client> make_clients(const Prepared& p) {
  std::vector<fed::Client> out(p.shards.size());
  for (std::size_t l = 0; l < p.shards.size(); ++l) {
    const auto& s = p.shards[l];
    auto& c = out[l];
    c.id = l;
    c.weight = static_cast<double>(s.train_size(p.corpus));
    c.train = view_of(p, l, s, s.train);
    c.val = view_of(p, l, s, s.val);
    c.test = view_of(p, l, s, s.test);
    for (auto a : c.train.avail) c.avail = c.avail | a;
  }
  return out;
}

struct Trained {
  std::vector<fed::Client> clients;
  fed::FederationState state;
  fed::FederationLog log;
};

inline Trained train(const Prepared& p, const fed::FederationConfig& fc) {
  Trained t;
  t.clients = make_clients(p);
  t.state = fed::init_federation(t.clients, p.cfg.dims, fc.seed);
  t.log = fed::run_afs(t.clients, t.state, p.cfg.dims, fc);
  return t;
}

inline Trained train(const Prepared& p) { return train(p, p.cfg.federation); }

// ---------------------------------------------------------------------------
// Evaluation

struct Predictions {
  std::vector<int> preds, labels;
};

/// Global classifier on one split view after recovery with the global models.
inline Predictions predict_view(const SplitView& v, const fed::FederationState& st, const nn::ModelDims& dims,
                                const fed::FederationConfig& fc, std::uint64_t seed) {
  Predictions out;
  if (v.size() == 0) return out;
  cls::Features x;
  if (fc.recovery == RecoveryMode::kZero) {
    x = assemble_features(v, {}, RecoveryMode::kZero);
  } else {
    const auto sched = diff::NoiseSchedule::linear(fc.diffusion.t_train, fc.diffusion.beta_start, fc.diffusion.beta_end);
    x = recover_modality(v, {&st.theta_g[0], &st.theta_g[1], &st.theta_g[2]}, dims, fc.sampler, sched, seed);
  }
  out.preds = cls::argmax_rows(cls::predict_logits(st.phi_g, dims, x));
  out.labels = v.labels;
  return out;
}

inline void append(Predictions& a, const Predictions& b) {
  a.preds.insert(a.preds.end(), b.preds.begin(), b.preds.end());
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
}

/// Pooled test metrics over every client's own test split, using the run's cached recovery.
inline eval::EvalReport evaluate_own_test(Trained& t, const nn::ModelDims& dims, const fed::FederationConfig& fc) {
  const auto sched = diff::NoiseSchedule::linear(fc.diffusion.t_train, fc.diffusion.beta_start, fc.diffusion.beta_end);
  Predictions all;
  for (auto& c : t.clients) {
    if (c.test.size() == 0) continue;
    const cls::Features x = fed::client_features(c, fed::Split::kTest, t.state, dims, fc, sched);
    Predictions p{cls::argmax_rows(cls::predict_logits(t.state.phi_g, dims, x)), c.test.labels};
    append(all, p);
  }
  return eval::evaluate(all.preds, all.labels, dims.n_classes);
}

/// Test splits of every client re-masked by `mask_of(client, shard)`.
template <class MaskFn>
eval::EvalReport evaluate_masked(const Prepared& p, const Trained& t, const fed::FederationConfig& fc, MaskFn mask_of,
                                 std::uint64_t seed) {
  Predictions all;
  for (std::size_t l = 0; l < p.shards.size(); ++l) {
    corpus::ClientDataset s = p.shards[l];
    mask_of(l, s);
    SplitView v = view_of(p, l, s, s.test);
    append(all, predict_view(v, t.state, p.cfg.dims, fc, numkit::derive_seed(seed, l)));
  }
  return eval::evaluate(all.preds, all.labels, p.cfg.dims.n_classes);
}

/// Every test utterance restricted to `pattern`.
inline eval::EvalReport evaluate_pattern(const Prepared& p, const Trained& t, const fed::FederationConfig& fc,
                                         ModalitySet pattern, std::uint64_t seed) {
  return evaluate_masked(
      p, t, fc,
      [&](std::size_t, corpus::ClientDataset& s) {
        for (auto pos : s.test)
          for (std::size_t u = 0; u < p.corpus.conversations[s.conversations[pos]].size(); ++u)
            s.mask.available[s.offsets[pos] + u] = pattern;
      },
      seed);
}

/// Test utterances under the random protocol at rate eta.
inline eval::EvalReport evaluate_random(const Prepared& p, const Trained& t, const fed::FederationConfig& fc, double eta,
                                        std::uint64_t seed) {
  return evaluate_masked(
      p, t, fc,
      [&](std::size_t l, corpus::ClientDataset& s) {
        const std::size_t n = s.count(p.corpus, s.test);
        auto m = corpus::apply_random_missing(n, eta, numkit::derive_seed(seed, 1000 + l));
        std::size_t k = 0;
        for (auto pos : s.test)
          for (std::size_t u = 0; u < p.corpus.conversations[s.conversations[pos]].size(); ++u)
            s.mask.available[s.offsets[pos] + u] = m.available[k++];
      },
      seed);
}

/// Recovered and true latents of modality m on the test rows that miss it, pooled over clients.
struct RecoveredRows {
  Eigen::MatrixXd recovered, original;
  std::vector<int> labels;
};

inline RecoveredRows recovered_test_rows(const Trained& t, const nn::ModelDims& dims, const fed::FederationConfig& fc,
                                         Modality m, bool conditional, std::uint64_t seed) {
  auto sc = fc.sampler;
  sc.conditional = conditional;
  const auto sched = diff::NoiseSchedule::linear(fc.diffusion.t_train, fc.diffusion.beta_start, fc.diffusion.beta_end);
  const std::size_t mi = index_of(m);
  RecoveredRows out;
  for (const auto& c : t.clients) {
    const auto rows = c.test.rows_missing(m);
    if (rows.empty()) continue;
    numkit::Tensor r = recover_rows(c.test, m, t.state.theta_g[mi], dims, sc, sched, numkit::derive_seed(seed, c.id * 4 + mi));
    const Eigen::Index base = out.recovered.rows();
    const auto n = base + static_cast<Eigen::Index>(rows.size());
    out.recovered.conservativeResize(n, static_cast<Eigen::Index>(dims.d));
    out.original.conservativeResize(n, static_cast<Eigen::Index>(dims.d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.labels.push_back(c.test.labels[rows[i]]);
      for (std::size_t k = 0; k < dims.d; ++k) {
        out.recovered(base + static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r(i, k);
        out.original(base + static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = c.test.h[mi](rows[i], k);
      }
    }
  }
  return out;
}

/// Mean over modalities of the mean per-class centroid distance between recovered and true
/// latents on the clients' test rows that miss them.
inline double centroid_error(const Trained& t, const nn::ModelDims& dims, const fed::FederationConfig& fc,
                             bool conditional, std::uint64_t seed) {
  double total = 0.0;
  std::size_t count = 0;
  for (Modality m : kAllModalities) {
    const auto r = recovered_test_rows(t, dims, fc, m, conditional, seed);
    if (r.labels.empty()) continue;
    total += eval::centroid_recovery_error(r.recovered, r.original, r.labels, dims.n_classes).mean;
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace fedrec::exp
