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
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fedrec/numkit/params.hpp"

namespace fedrec::numkit {

struct SgdConfig {
  double lr = 1e-2;
};

inline void sgd_step(ParameterSet& params, const ParameterSet& grads, const SgdConfig& cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.value(i).data();
    const auto& g = grads.at(params.name(i)).data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= cfg.lr * g[k];
  }
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with state keyed by parameter name; parameters absent from `grads` are skipped.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterSet& params, const ParameterSet& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const std::string& name = grads.name(i);
      auto& p = params.at(name).data();
      const auto& g = grads.value(i).data();
      auto& [m, v] = state_[name];
      if (m.empty()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        p[k] -= cfg_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

}  // namespace fedrec::numkit
