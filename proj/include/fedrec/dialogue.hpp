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
#include <vector>

#include "fedrec/corpus/corpus.hpp"
#include "fedrec/corpus/partition.hpp"
#include "fedrec/dgn.hpp"
#include "fedrec/encoder.hpp"
#include "fedrec/modality.hpp"

namespace fedrec {

/// One conversation as the networks see it: graph, latents, availability, labels.
struct ConvBatch {
  dgn::DialogueGraph graph;
  std::array<numkit::Tensor, kNumModalities> h;  // (𝒞 × d) per modality, raw (unmasked) latents
  std::vector<ModalitySet> avail;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

inline ConvBatch make_batch(const corpus::Corpus& c, const corpus::ClientDataset& client, std::size_t pos,
                            const std::vector<ConversationLatents>& latents, std::size_t window) {
  const std::size_t ci = client.conversations[pos];
  const auto& conv = c.conversations[ci];
  ConvBatch b;
  b.graph = dgn::build_dialogue_graph(conv, window);
  b.h = latents[ci].h;
  for (std::size_t u = 0; u < conv.size(); ++u) {
    b.avail.push_back(client.availability(pos, u));
    b.labels.push_back(conv.utterances[u].label);
  }
  return b;
}

inline std::vector<ConvBatch> make_batches(const corpus::Corpus& c, const corpus::ClientDataset& client,
                                           const std::vector<std::size_t>& positions,
                                           const std::vector<ConversationLatents>& latents, std::size_t window) {
  std::vector<ConvBatch> out;
  out.reserve(positions.size());
  for (auto p : positions) out.push_back(make_batch(c, client, p, latents, window));
  return out;
}

/// Same batch with modality m hidden on every utterance.
inline ConvBatch without_modality(ConvBatch b, Modality m) {
  for (auto& a : b.avail) a.erase(m);
  return b;
}

}  // namespace fedrec
