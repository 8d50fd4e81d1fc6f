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
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "fedrec/dgn.hpp"
#include "fedrec/dialogue.hpp"
#include "fedrec/numkit/optim.hpp"
#include "fedrec/numkit/rng.hpp"
#include "fedrec/scn.hpp"

namespace fedrec::scn {

struct PretrainConfig {
  std::size_t epochs = 30;  // P
  double lr = 1e-2;
  std::uint64_t seed = 0;
};

struct EpochLoss {
  std::size_t epoch = 0;
  double l_dgn = 0.0;
  double l_scn = 0.0;
  double l = 0.0;  // l_dgn + l_scn
};

struct JointLoss {
  numkit::Var l_dgn, l_scn, total;
};

/// L = L_DGN + L_SCN on one conversation.
inline JointLoss joint_loss(numkit::Tape& tape, const Bound& dgn_p, const Bound& scn_p, const nn::ModelDims& dims,
                            const ConvBatch& b) {
  JointLoss out;
  out.l_dgn = dgn::dgn_loss(dgn::dgn_forward(tape, dgn_p, dims, b.graph, b.h, b.avail).logits, b.labels);
  out.l_scn = scn_loss(scn_forward(tape, scn_p, dims, b.h, b.avail).logits, b.labels);
  out.total = numkit::add(out.l_dgn, out.l_scn);
  return out;
}

/// Per-client SGD on the joint objective, one conversation per step, P epochs.
/// Conversation order is reshuffled every epoch from cfg.seed.
inline std::vector<EpochLoss> pretrain_joint(const std::vector<ConvBatch>& train, ParameterSet& dgn_params,
                                             ParameterSet& scn_params, const nn::ModelDims& dims,
                                             const PretrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("pretrain_joint: client has no training conversations");
  std::vector<EpochLoss> log;
  numkit::Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochLoss e{epoch};
    double weight = 0.0;
    for (auto idx : order) {
      const ConvBatch& b = train[idx];
      numkit::Tape tape;
      Bound bd(tape, dgn_params), bs(tape, scn_params);
      JointLoss jl = joint_loss(tape, bd, bs, dims, b);
      const double ld = jl.l_dgn.value()[0], ls = jl.l_scn.value()[0];
      if (!std::isfinite(ld) || !std::isfinite(ls)) {
        throw numkit::NumericalError("pretraining diverged at epoch " + std::to_string(epoch) + " (L_DGN=" +
                                     std::to_string(ld) + ", L_SCN=" + std::to_string(ls) + ")");
      }
      tape.backward(jl.total);
      numkit::sgd_step(dgn_params, bd.gradients(), {cfg.lr});
      numkit::sgd_step(scn_params, bs.gradients(), {cfg.lr});
      const double w = static_cast<double>(b.size());
      e.l_dgn += w * ld;
      e.l_scn += w * ls;
      weight += w;
    }
    e.l_dgn /= weight;
    e.l_scn /= weight;
    e.l = e.l_dgn + e.l_scn;
    if (!dgn_params.all_finite() || !scn_params.all_finite()) {
      throw numkit::NumericalError("pretraining produced non-finite parameters at epoch " + std::to_string(epoch));
    }
    log.push_back(e);
  }
  return log;
}

/// Mean joint loss over conversations without updating anything.
inline EpochLoss evaluate_joint(const std::vector<ConvBatch>& data, const ParameterSet& dgn_params,
                                const ParameterSet& scn_params, const nn::ModelDims& dims) {
  EpochLoss e;
  double weight = 0.0;
  for (const auto& b : data) {
    numkit::Tape tape(false);
    Bound bd(tape, dgn_params), bs(tape, scn_params);
    JointLoss jl = joint_loss(tape, bd, bs, dims, b);
    const double w = static_cast<double>(b.size());
    e.l_dgn += w * jl.l_dgn.value()[0];
    e.l_scn += w * jl.l_scn.value()[0];
    weight += w;
  }
  if (weight > 0) {
    e.l_dgn /= weight;
    e.l_scn /= weight;
  }
  e.l = e.l_dgn + e.l_scn;
  return e;
}

inline void write_loss_csv(std::ostream& os, const std::vector<EpochLoss>& log, const std::string& config_hash) {
  os << "# config_hash=" << config_hash << "\n";
  os << "epoch,L_DGN,L_SCN,L\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.l_dgn, e.l_scn, e.l);
    os << buf;
  }
}

}  // namespace fedrec::scn
