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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fedrec/classifier.hpp"
#include "fedrec/discdiff.hpp"
#include "fedrec/evalstats.hpp"
#include "fedrec/numkit/params.hpp"
#include "fedrec/recovery.hpp"

namespace fedrec::fed {

using numkit::ParameterSet;
using numkit::Tensor;

enum class Stage { kRecovery, kClassifier, kJoint };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kRecovery: return "I";
    case Stage::kClassifier: return "II";
    case Stage::kJoint: return "I+II";
  }
  return "?";
}

/// Stage I iff t mod E is odd; with strict alternation, iff t is odd.
inline Stage afs_stage(std::size_t t, std::size_t E, bool strict_alternation = false) {
  if (t < 1) throw std::invalid_argument("rounds are numbered from 1");
  if (E < 2) throw std::invalid_argument("alternation interval E must be at least 2");
  const std::size_t r = strict_alternation ? t : t % E;
  return r % 2 == 1 ? Stage::kRecovery : Stage::kClassifier;
}

inline constexpr std::array<const char*, 4> kModules = {"diff.l", "diff.v", "diff.a", "cls"};
inline constexpr std::size_t kClassifierModule = 3;

struct FederationConfig {
  std::size_t rounds = 12;
  std::size_t E = 3;
  std::size_t local_epochs = 1;      // e
  std::size_t diffusion_epochs = 0;  // Stage I passes per round; 0 → local_epochs
  double participation = 1.0;        // fraction of clients sampled per round
  bool strict_alternation = false;
  bool afs = true;  // false → both modules trained and sent every round
  RecoveryMode recovery = RecoveryMode::kDiffusion;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::vector<std::size_t> execution_order;  // empty → client-id order

  diff::DiffusionConfig diffusion;
  diff::SamplerConfig sampler;
  cls::ClassifierConfig classifier;

  std::size_t stage_one_epochs() const { return diffusion_epochs ? diffusion_epochs : local_epochs; }
  void validate() const {
    if (E < 2) throw std::invalid_argument("federation: E must be at least 2");
    if (local_epochs < 1) throw std::invalid_argument("federation: local_epochs must be at least 1");
    if (!(participation > 0.0 && participation <= 1.0)) throw std::invalid_argument("federation: participation must lie in (0, 1]");
  }
};

/// One federated client: frozen conditioning features and local module copies.
struct Client {
  std::size_t id = 0;
  double weight = 0.0;  // |D_l|: training utterances
  ModalitySet avail;    // M_l^avail on the training split
  SplitView train, val, test;
  ParameterSet phi;
  std::array<ParameterSet, kNumModalities> theta;

  // recovered latents per split and modality, tagged by global model version
  struct Cache {
    std::array<std::uint64_t, kNumModalities> version{};
    std::array<Tensor, kNumModalities> rows;
    Cache() { version.fill(std::numeric_limits<std::uint64_t>::max()); }
  };
  std::array<Cache, 3> cache;  // train, val, test
};

enum class Split : std::size_t { kTrain = 0, kVal = 1, kTest = 2 };

struct FederationState {
  std::array<ParameterSet, kNumModalities> theta_g;
  ParameterSet phi_g;
  std::array<std::uint64_t, kNumModalities> theta_version{};  // bumped on every aggregation
  std::size_t round = 0;
};

struct LogRow {
  std::size_t round = 0;
  Stage stage = Stage::kRecovery;
  std::size_t client = 0;
  std::string module;
  std::size_t bytes_up = 0, bytes_down = 0;
  double local_loss = std::numeric_limits<double>::quiet_NaN();
  double val_acc = 0.0, val_waf1 = 0.0;
};

/// Hashes of a client's local modules around its local update.
struct FreezeRecord {
  std::size_t round = 0;
  Stage stage = Stage::kRecovery;
  std::size_t client = 0;
  bool participated = false;
  std::uint64_t cls_before = 0, cls_after = 0;
  std::uint64_t diff_before = 0, diff_after = 0;
};

struct FederationLog {
  std::vector<LogRow> rows;
  std::vector<FreezeRecord> freeze;
  std::vector<Stage> stages;
};

inline std::uint64_t diffusion_hash(const Client& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : c.theta) {
    const auto v = numkit::hash_parameters(t);
    h = numkit::fnv1a(&v, sizeof v, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Aggregation

/// Parameter-wise weighted mean over contributors, weights renormalized to sum to 1.
/// Computed as θ₁ + Σ w_i (θ_i − θ₁) so identical uploads aggregate exactly.
inline ParameterSet weighted_average(const std::vector<const ParameterSet*>& uploads, const std::vector<double>& sizes) {
  if (uploads.empty()) throw std::invalid_argument("aggregate: no uploads");
  if (uploads.size() != sizes.size()) throw std::invalid_argument("aggregate: one size per upload is required");
  double total = 0.0;
  for (double s : sizes) {
    if (!(s > 0.0)) throw std::invalid_argument("aggregate: client sizes must be positive");
    total += s;
  }
  const ParameterSet& first = *uploads[0];
  for (const auto* u : uploads)
    if (!u->same_manifest(first)) throw std::invalid_argument("aggregate: uploads have different manifests");
  ParameterSet out = first;
  for (std::size_t t = 0; t < out.size(); ++t) {
    auto& dst = out.value(t).data();
    const auto& base = first.value(t).data();
    for (std::size_t u = 1; u < uploads.size(); ++u) {
      const double w = sizes[u] / total;
      const auto& src = uploads[u]->value(t).data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += w * (src[k] - base[k]);
    }
  }
  return out;
}

/// θ_g^m ← Σ_l (|D_l| / Σ_contributors |D_i|) θ_l^m for each modality with uploads;
/// modalities without contributors keep `previous`.
inline std::array<ParameterSet, kNumModalities> aggregate_modality_models(
    const std::array<std::vector<const ParameterSet*>, kNumModalities>& uploads,
    const std::array<std::vector<double>, kNumModalities>& sizes, const std::array<ParameterSet, kNumModalities>& previous) {
  std::array<ParameterSet, kNumModalities> out = previous;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    if (!uploads[m].empty()) out[m] = weighted_average(uploads[m], sizes[m]);
  return out;
}

inline ParameterSet aggregate_classifier(const std::vector<const ParameterSet*>& uploads, const std::vector<double>& sizes) {
  return weighted_average(uploads, sizes);
}

// ---------------------------------------------------------------------------
// Message boundary

/// What crosses the wire: 32-bit payload plus manifest.
struct Message {
  numkit::Checkpoint ck;
  std::size_t bytes() const { return ck.bytes(); }
};

inline Message send(const ParameterSet& p) { return Message{numkit::serialize(p)}; }
inline ParameterSet receive(const Message& m) { return numkit::deserialize(m.ck); }

// ---------------------------------------------------------------------------
// Local updates

/// Completed features for a split, recovering missing latents with the client's
/// current copies of the global models (cached per model version).
inline cls::Features client_features(Client& c, Split split, const FederationState& st, const nn::ModelDims& dims,
                                     const FederationConfig& cfg, const diff::NoiseSchedule& sched) {
  const SplitView& v = split == Split::kTrain ? c.train : split == Split::kVal ? c.val : c.test;
  if (cfg.recovery == RecoveryMode::kZero) return assemble_features(v, {}, RecoveryMode::kZero);
  auto& cache = c.cache[static_cast<std::size_t>(split)];
  for (Modality m : kAllModalities) {
    const std::size_t mi = index_of(m);
    if (v.rows_missing(m).empty()) continue;
    if (c.theta[mi].size() == 0) {
      throw std::invalid_argument(std::string("client has no global diffusion model for modality ") + modality_key(m));
    }
    if (cache.version[mi] == st.theta_version[mi]) continue;
    std::uint64_t seed = numkit::derive_seed(cfg.seed, 0x5EC0 + c.id);
    seed = numkit::derive_seed(seed, static_cast<std::uint64_t>(split) * 4 + mi);
    seed = numkit::derive_seed(seed, st.theta_version[mi]);
    cache.rows[mi] = recover_rows(v, m, c.theta[mi], dims, cfg.sampler, sched, seed);
    cache.version[mi] = st.theta_version[mi];
  }
  return assemble_features(v, cache.rows, RecoveryMode::kDiffusion);
}

/// Stage I: e passes of noise matching for each locally available modality.
/// Returns the per-modality final loss (NaN where nothing was trained).
inline std::array<double, kNumModalities> local_update_recovery(Client& c, std::size_t epochs, const nn::ModelDims& dims,
                                                                const FederationConfig& cfg,
                                                                const diff::NoiseSchedule& sched, std::uint64_t seed) {
  if (c.avail.empty()) throw std::invalid_argument("client has no available modality");
  std::array<double, kNumModalities> loss;
  loss.fill(std::numeric_limits<double>::quiet_NaN());
  for (Modality m : c.avail.members()) {
    const auto data = diffusion_data(c.train, m);
    if (data.size() == 0) continue;
    numkit::Rng rng(numkit::derive_seed(seed, index_of(m)));
    loss[index_of(m)] = diff::train_diffusion(c.theta[index_of(m)], m, dims, data, epochs, cfg.diffusion, sched, rng);
  }
  return loss;
}

/// Stage II: recover missing modalities with the frozen global models, then e
/// passes of classifier training.
inline double local_update_classifier(Client& c, const FederationState& st, std::size_t epochs,
                                      const nn::ModelDims& dims, const FederationConfig& cfg,
                                      const diff::NoiseSchedule& sched, std::uint64_t seed) {
  const cls::Features x = client_features(c, Split::kTrain, st, dims, cfg, sched);
  numkit::Rng rng(seed);
  return cls::train_classifier(c.phi, dims, x, c.train.labels, epochs, cfg.classifier, rng);
}

/// Every client receives every global model, including modalities it never observed.
/// The server keeps what it publishes: its copy is rounded through the wire format as well.
inline std::size_t broadcast_diffusion(FederationState& st, std::vector<Client>& clients) {
  for (auto& t : st.theta_g) t = receive(send(t));
  std::size_t bytes = 0;
  for (auto& c : clients) {
    bytes = 0;
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      Message msg = send(st.theta_g[m]);
      bytes += msg.bytes();
      c.theta[m] = receive(msg);
    }
  }
  return bytes;
}

inline std::size_t broadcast_classifier(FederationState& st, std::vector<Client>& clients) {
  st.phi_g = receive(send(st.phi_g));
  std::size_t bytes = 0;
  for (auto& c : clients) {
    Message msg = send(st.phi_g);
    bytes = msg.bytes();
    c.phi = receive(msg);
  }
  return bytes;
}

/// Runs fn(i) for i in `order`, at most `jobs` at a time.
inline void parallel_for(const std::vector<std::size_t>& order, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || order.size() <= 1) {
    for (auto i : order) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(order.size());
  for (std::size_t start = 0; start < order.size(); start += jobs) {
    std::vector<std::thread> pool;
    for (std::size_t k = start; k < std::min(order.size(), start + jobs); ++k)
      pool.emplace_back([&, k] {
        try {
          fn(order[k]);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<std::size_t> participants(std::size_t n, std::size_t round, const FederationConfig& cfg) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  if (cfg.participation >= 1.0) return ids;
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.participation * static_cast<double>(n))));
  numkit::Rng rng(numkit::derive_seed(cfg.seed, 0xC11E47 + round));
  rng.shuffle(ids.begin(), ids.end());
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Initial global models from the run seed, broadcast so every client starts identical.
inline FederationState init_federation(std::vector<Client>& clients, const nn::ModelDims& dims, std::uint64_t seed) {
  FederationState st;
  numkit::Rng rng(numkit::derive_seed(seed, 0xD1FF));
  for (Modality m : kAllModalities) st.theta_g[index_of(m)] = diff::init_diffusion_params(m, dims, rng);
  numkit::Rng crng(numkit::derive_seed(seed, 0xC15));
  st.phi_g = cls::init_classifier_params(dims, crng);
  broadcast_diffusion(st, clients);
  broadcast_classifier(st, clients);
  return st;
}

/// Validation metrics of the current global classifier on one client.
inline eval::EvalReport client_validation(Client& c, const FederationState& st, const nn::ModelDims& dims,
                                          const FederationConfig& cfg, const diff::NoiseSchedule& sched) {
  if (c.val.size() == 0) return {};
  const cls::Features x = client_features(c, Split::kVal, st, dims, cfg, sched);
  auto preds = cls::argmax_rows(cls::predict_logits(st.phi_g, dims, x));
  return eval::evaluate(preds, c.val.labels, dims.n_classes);
}

/// Algorithm 2: T rounds of stage-scheduled local updates, aggregation and broadcast.
inline FederationLog run_afs(std::vector<Client>& clients, FederationState& st, const nn::ModelDims& dims,
                             const FederationConfig& cfg) {
  cfg.validate();
  FederationLog log;
  const diff::NoiseSchedule sched = diff::NoiseSchedule::linear(cfg.diffusion.t_train, cfg.diffusion.beta_start, cfg.diffusion.beta_end);
  const std::size_t n = clients.size();
  std::vector<std::size_t> order = cfg.execution_order;
  if (order.empty())
    for (std::size_t i = 0; i < n; ++i) order.push_back(i);
  if (order.size() != n) throw std::invalid_argument("execution order must list every client once");

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const Stage stage = cfg.afs ? afs_stage(t, cfg.E, cfg.strict_alternation) : Stage::kJoint;
    const bool do_recovery = stage != Stage::kClassifier && cfg.recovery == RecoveryMode::kDiffusion;
    const bool do_classifier = stage != Stage::kRecovery;
    log.stages.push_back(stage);
    const auto part = participants(n, t, cfg);
    std::vector<bool> in_round(n, false);
    for (auto i : part) in_round[i] = true;

    std::vector<FreezeRecord> freeze(n);
    std::vector<std::array<double, 4>> loss(n);
    std::vector<std::array<std::size_t, 4>> up(n);
    for (auto& l : loss) l.fill(std::numeric_limits<double>::quiet_NaN());
    for (auto& u : up) u.fill(0);
    std::vector<std::array<ParameterSet, 4>> uploads(n);

    std::vector<std::size_t> run_order;
    for (auto i : order)
      if (in_round[i]) run_order.push_back(i);
    parallel_for(run_order, cfg.jobs, [&](std::size_t i) {
      Client& c = clients[i];
      FreezeRecord& fr = freeze[i];
      fr.round = t;
      fr.stage = stage;
      fr.client = c.id;
      fr.participated = true;
      fr.cls_before = numkit::hash_parameters(c.phi);
      fr.diff_before = diffusion_hash(c);
      const std::uint64_t seed = numkit::derive_seed(numkit::derive_seed(cfg.seed, c.id), t);
      // The classifier of a joint round sees recovery from the models held at the start of the round.
      if (do_classifier) {
        loss[i][kClassifierModule] =
            local_update_classifier(c, st, cfg.local_epochs, dims, cfg, sched, numkit::derive_seed(seed, 2));
        Message msg = send(c.phi);
        up[i][kClassifierModule] = msg.bytes();
        uploads[i][kClassifierModule] = receive(msg);
      }
      if (do_recovery) {
        auto l = local_update_recovery(c, cfg.stage_one_epochs(), dims, cfg, sched, numkit::derive_seed(seed, 1));
        for (Modality m : c.avail.members()) {
          const std::size_t mi = index_of(m);
          if (std::isnan(l[mi])) continue;
          loss[i][mi] = l[mi];
          Message msg = send(c.theta[mi]);
          up[i][mi] = msg.bytes();
          uploads[i][mi] = receive(msg);
        }
      }
      fr.cls_after = numkit::hash_parameters(c.phi);
      fr.diff_after = diffusion_hash(c);
    });

    // server: aggregation in client-id order
    std::array<std::size_t, 4> down{};
    if (do_recovery) {
      std::array<std::vector<const ParameterSet*>, kNumModalities> ups;
      std::array<std::vector<double>, kNumModalities> sizes;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < kNumModalities; ++m)
          if (up[i][m]) {
            ups[m].push_back(&uploads[i][m]);
            sizes[m].push_back(clients[i].weight);
          }
      st.theta_g = aggregate_modality_models(ups, sizes, st.theta_g);
      for (std::size_t m = 0; m < kNumModalities; ++m)
        if (!ups[m].empty()) ++st.theta_version[m];
      broadcast_diffusion(st, clients);
      for (std::size_t m = 0; m < kNumModalities; ++m) down[m] = send(st.theta_g[m]).bytes();
    }
    if (do_classifier) {
      std::vector<const ParameterSet*> ups;
      std::vector<double> sizes;
      for (std::size_t i = 0; i < n; ++i)
        if (up[i][kClassifierModule]) {
          ups.push_back(&uploads[i][kClassifierModule]);
          sizes.push_back(clients[i].weight);
        }
      if (!ups.empty()) st.phi_g = aggregate_classifier(ups, sizes);
      down[kClassifierModule] = broadcast_classifier(st, clients);
    }
    st.round = t;

    std::vector<eval::EvalReport> val(n);
    parallel_for(order, cfg.jobs, [&](std::size_t i) { val[i] = client_validation(clients[i], st, dims, cfg, sched); });
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        LogRow r;
        r.round = t;
        r.stage = stage;
        r.client = clients[i].id;
        r.module = kModules[k];
        r.bytes_up = up[i][k];
        r.bytes_down = down[k];
        r.local_loss = loss[i][k];
        r.val_acc = val[i].accuracy;
        r.val_waf1 = val[i].waf1;
        log.rows.push_back(r);
      }
      if (!in_round[i]) {
        freeze[i].round = t;
        freeze[i].stage = stage;
        freeze[i].client = clients[i].id;
      }
      log.freeze.push_back(freeze[i]);
    }
  }
  return log;
}

// ---------------------------------------------------------------------------
// Logs and communication summary

inline void write_round_log(std::ostream& os, const FederationLog& log, const std::string& config_hash, std::uint64_t seed) {
  os << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  os << "round,stage,client,module,bytes_up,bytes_down,local_loss,val_acc,val_waf1\n";
  char buf[256];
  for (const auto& r : log.rows) {
    char lossbuf[32] = "";
    if (!std::isnan(r.local_loss)) std::snprintf(lossbuf, sizeof lossbuf, "%.9g", r.local_loss);
    std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%s,%zu,%zu,%s,%.6f,%.6f\n", r.round, stage_name(r.stage), r.client,
                  r.module.c_str(), r.bytes_up, r.bytes_down, lossbuf, r.val_acc, r.val_waf1);
    os << buf;
  }
}

struct CommSummary {
  std::size_t rounds = 0;
  std::size_t clients = 0;
  double afs_bytes_per_round_client = 0.0;    // measured: up + down
  double naive_bytes_per_round_client = 0.0;  // every module up and down every round
  double diffusion_share = 0.0;               // of one full model set
  std::size_t diffusion_bytes = 0, classifier_bytes = 0;
};

/// Measured average bytes per round per client against the all-modules-every-round baseline.
inline CommSummary comm_summary(const FederationLog& log, const FederationState& st, std::size_t n_clients) {
  CommSummary s;
  s.rounds = log.stages.size();
  s.clients = n_clients;
  for (const auto& t : st.theta_g) s.diffusion_bytes += send(t).bytes();
  s.classifier_bytes = send(st.phi_g).bytes();
  const double full = static_cast<double>(s.diffusion_bytes + s.classifier_bytes);
  s.diffusion_share = static_cast<double>(s.diffusion_bytes) / full;
  s.naive_bytes_per_round_client = 2.0 * full;
  double total = 0.0;
  for (const auto& r : log.rows) total += static_cast<double>(r.bytes_up + r.bytes_down);
  if (s.rounds && n_clients) total /= static_cast<double>(s.rounds * n_clients);
  s.afs_bytes_per_round_client = total;
  return s;
}

}  // namespace fedrec::fed
