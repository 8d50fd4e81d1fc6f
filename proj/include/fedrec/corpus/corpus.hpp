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
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrec/modality.hpp"
#include "fedrec/numkit/rng.hpp"

namespace fedrec::corpus {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Utterance {
  std::size_t index = 1;  // 1-based position in the conversation
  int speaker = 0;
  int label = 0;
  std::array<std::vector<double>, kNumModalities> features;

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::size_t id = 0;
  std::vector<Utterance> utterances;

  std::size_t size() const { return utterances.size(); }
  int speaker_count() const {
    int n = 0;
    for (const auto& u : utterances) n = std::max(n, u.speaker + 1);
    return n;
  }
  bool operator==(const Conversation&) const = default;
};

struct Corpus {
  std::array<std::size_t, kNumModalities> dims{};
  int n_classes = 0;
  std::vector<Conversation> conversations;

  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.size();
    return n;
  }
  bool operator==(const Corpus&) const = default;
};

struct CorpusConfig {
  std::size_t n_conversations = 60;
  std::size_t utterances_per_conv = 10;
  int n_speakers = 2;
  int n_classes = 4;
  std::array<std::size_t, kNumModalities> modality_dims{16, 16, 16};
  double class_separation = 4.0;
  std::uint64_t seed = 1;
};

/// Norm of each class mean is kMeanNormPerSeparation * class_separation.
inline constexpr double kMeanNormPerSeparation = 0.5;
inline constexpr double kLabelRepeatProb = 0.6;
inline constexpr double kSpeakerRepeatProb = 0.2;

/// Class-conditional Gaussian features, one fixed mean per (class, modality).
inline Corpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.n_conversations == 0 || cfg.utterances_per_conv == 0 || cfg.n_speakers < 1 || cfg.n_classes < 1) {
    throw DataError("generate_corpus: counts must be positive");
  }
  for (auto d : cfg.modality_dims)
    if (d == 0) throw DataError("generate_corpus: modality dimensions must be positive");
  if (!(cfg.class_separation >= 0.0)) throw DataError("generate_corpus: class_separation must be nonnegative");

  numkit::Rng rng(cfg.seed);
  Corpus c;
  c.dims = cfg.modality_dims;
  c.n_classes = cfg.n_classes;

  // means[k][m]
  std::vector<std::array<std::vector<double>, kNumModalities>> means(static_cast<std::size_t>(cfg.n_classes));
  const double norm = kMeanNormPerSeparation * cfg.class_separation;
  for (auto& per_class : means) {
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      std::vector<double> u(cfg.modality_dims[m]);
      double s = 0.0;
      for (double& v : u) {
        v = rng.normal();
        s += v * v;
      }
      s = std::sqrt(s);
      for (double& v : u) v = s > 0.0 ? norm * v / s : 0.0;
      per_class[m] = std::move(u);
    }
  }

  for (std::size_t ci = 0; ci < cfg.n_conversations; ++ci) {
    Conversation conv;
    conv.id = ci;
    int speaker = 0;
    int label = static_cast<int>(rng.uniform_int(0, static_cast<std::size_t>(cfg.n_classes - 1)));
    for (std::size_t i = 0; i < cfg.utterances_per_conv; ++i) {
      if (i > 0) {
        if (cfg.n_speakers > 1 && !rng.bernoulli(kSpeakerRepeatProb)) speaker = (speaker + 1) % cfg.n_speakers;
        if (cfg.n_classes > 1 && !rng.bernoulli(kLabelRepeatProb)) {
          // uniformly among the other classes
          int next = static_cast<int>(rng.uniform_int(0, static_cast<std::size_t>(cfg.n_classes - 2)));
          label = next >= label ? next + 1 : next;
        }
      }
      Utterance u;
      u.index = i + 1;
      u.speaker = speaker;
      u.label = label;
      for (std::size_t m = 0; m < kNumModalities; ++m) {
        const auto& mu = means[static_cast<std::size_t>(label)][m];
        u.features[m].resize(mu.size());
        for (std::size_t k = 0; k < mu.size(); ++k) u.features[m][k] = mu[k] + rng.normal();
      }
      conv.utterances.push_back(std::move(u));
    }
    c.conversations.push_back(std::move(conv));
  }
  return c;
}

/// Per-sample availability; samples are utterances in a fixed traversal order.
struct MissingMask {
  std::vector<ModalitySet> available;

  std::size_t size() const { return available.size(); }
  bool operator==(const MissingMask&) const = default;

  static MissingMask full(std::size_t n) { return MissingMask{std::vector<ModalitySet>(n, ModalitySet::all())}; }
};

/// η = 1 − Σ m_i / (N·M).
inline double missing_rate(const MissingMask& mask) {
  if (mask.size() == 0) return 0.0;
  std::size_t avail = 0;
  for (auto s : mask.available) avail += s.count();
  return 1.0 - static_cast<double>(avail) / static_cast<double>(mask.size() * kNumModalities);
}

inline constexpr double kMaxMissingRate = static_cast<double>(kNumModalities - 1) / static_cast<double>(kNumModalities);

/// Removes exactly round(eta·N·M) slots chosen uniformly, keeping m_i ≥ 1.
inline MissingMask apply_random_missing(std::size_t n_samples, double eta, std::uint64_t seed) {
  if (!(eta >= 0.0) || eta > kMaxMissingRate + 1e-12) {
    throw DataError("missing rate " + std::to_string(eta) + " outside [0, (M-1)/M]; every sample must keep a modality");
  }
  MissingMask mask = MissingMask::full(n_samples);
  const auto target = static_cast<std::size_t>(std::llround(eta * static_cast<double>(n_samples * kNumModalities)));
  std::vector<std::size_t> slots(n_samples * kNumModalities);
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  numkit::Rng rng(seed);
  rng.shuffle(slots.begin(), slots.end());
  std::size_t removed = 0;
  for (std::size_t s : slots) {
    if (removed == target) break;
    ModalitySet& avail = mask.available[s / kNumModalities];
    if (avail.count() > 1) {
      avail.erase(kAllModalities[s % kNumModalities]);
      ++removed;
    }
  }
  return mask;
}

/// Every sample keeps exactly the modalities in `pattern`.
inline MissingMask apply_fixed_missing(std::size_t n_samples, ModalitySet pattern) {
  if (pattern.empty()) throw DataError("fixed pattern must keep at least one modality");
  return MissingMask{std::vector<ModalitySet>(n_samples, pattern)};
}

inline MissingMask apply_random_missing(const Corpus& c, double eta, std::uint64_t seed) {
  return apply_random_missing(c.utterance_count(), eta, seed);
}
inline MissingMask apply_fixed_missing(const Corpus& c, ModalitySet pattern) {
  return apply_fixed_missing(c.utterance_count(), pattern);
}

}  // namespace fedrec::corpus
