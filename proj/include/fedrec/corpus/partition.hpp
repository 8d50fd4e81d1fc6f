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
#include <optional>
#include <string>
#include <vector>

#include "fedrec/corpus/corpus.hpp"

namespace fedrec::corpus {

/// One client's shard: whole conversations plus the availability mask over their utterances.
struct ClientDataset {
  std::size_t client_id = 0;
  std::vector<std::size_t> conversations;  // indices into Corpus::conversations, dealt order
  std::vector<std::size_t> train, val, test;  // positions into `conversations`
  MissingMask mask;                          // utterances of `conversations`, in order
  std::vector<std::size_t> offsets;          // first mask slot of each conversation
  std::optional<ModalitySet> fixed_pattern;

  ModalitySet availability(std::size_t pos, std::size_t utt) const { return mask.available[offsets[pos] + utt]; }

  /// M_avail: modalities with at least one available sample.
  ModalitySet available_modalities() const {
    ModalitySet s;
    for (auto a : mask.available) s = s | a;
    return s;
  }

  /// Utterance count over the given positions.
  std::size_t count(const Corpus& c, const std::vector<std::size_t>& positions) const {
    std::size_t n = 0;
    for (auto p : positions) n += c.conversations[conversations[p]].size();
    return n;
  }
  /// N_l, the aggregation weight: training utterances.
  std::size_t train_size(const Corpus& c) const { return count(c, train); }
};

inline constexpr double kTrainFraction = 0.7;
inline constexpr double kValFraction = 0.1;

/// Shuffles conversations and deals them round-robin; splits 70/10/20 by conversation.
inline std::vector<ClientDataset> partition_clients(const Corpus& c, std::size_t n_clients, std::uint64_t seed) {
  if (n_clients == 0) throw DataError("partition_clients: need at least one client");
  if (n_clients > c.conversations.size()) {
    throw DataError("partition_clients: " + std::to_string(n_clients) + " clients but only " +
                    std::to_string(c.conversations.size()) + " conversations");
  }
  std::vector<std::size_t> order(c.conversations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  numkit::Rng rng(seed);
  rng.shuffle(order.begin(), order.end());

  std::vector<ClientDataset> clients(n_clients);
  for (std::size_t l = 0; l < n_clients; ++l) clients[l].client_id = l;
  for (std::size_t i = 0; i < order.size(); ++i) clients[i % n_clients].conversations.push_back(order[i]);

  for (auto& cl : clients) {
    const std::size_t n = cl.conversations.size();
    std::size_t n_train = static_cast<std::size_t>(std::llround(kTrainFraction * static_cast<double>(n)));
    std::size_t n_val = static_cast<std::size_t>(std::llround(kValFraction * static_cast<double>(n)));
    n_train = std::max<std::size_t>(1, std::min(n_train, n));
    n_val = std::min(n_val, n - n_train);
    for (std::size_t p = 0; p < n; ++p) {
      if (p < n_train) cl.train.push_back(p);
      else if (p < n_train + n_val) cl.val.push_back(p);
      else cl.test.push_back(p);
    }
    std::size_t off = 0;
    for (auto ci : cl.conversations) {
      cl.offsets.push_back(off);
      off += c.conversations[ci].size();
    }
    cl.mask = MissingMask::full(off);
  }
  return clients;
}

inline void apply_fixed_protocol(std::vector<ClientDataset>& clients, const std::vector<ModalitySet>& patterns) {
  if (patterns.size() != clients.size()) throw DataError("one fixed pattern per client is required");
  for (std::size_t l = 0; l < clients.size(); ++l) {
    clients[l].mask = apply_fixed_missing(clients[l].mask.size(), patterns[l]);
    clients[l].fixed_pattern = patterns[l];
  }
}

inline void apply_random_protocol(std::vector<ClientDataset>& clients, double eta, std::uint64_t seed) {
  for (auto& cl : clients) {
    cl.mask = apply_random_missing(cl.mask.size(), eta, numkit::derive_seed(seed, cl.client_id));
    cl.fixed_pattern.reset();
  }
}

/// Client masks mapped back to corpus traversal order.
inline MissingMask corpus_mask(const Corpus& c, const std::vector<ClientDataset>& clients) {
  std::vector<std::size_t> conv_offset(c.conversations.size() + 1, 0);
  for (std::size_t i = 0; i < c.conversations.size(); ++i) conv_offset[i + 1] = conv_offset[i] + c.conversations[i].size();
  MissingMask out = MissingMask::full(c.utterance_count());
  for (const auto& cl : clients)
    for (std::size_t p = 0; p < cl.conversations.size(); ++p) {
      const std::size_t ci = cl.conversations[p];
      for (std::size_t u = 0; u < c.conversations[ci].size(); ++u)
        out.available[conv_offset[ci] + u] = cl.availability(p, u);
    }
  return out;
}

}  // namespace fedrec::corpus
