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
#include <vector>

#include "fedrec/corpus/corpus.hpp"
#include "fedrec/modality.hpp"
#include "fedrec/numkit/rng.hpp"
#include "fedrec/numkit/tensor.hpp"

namespace fedrec {

/// Frozen per-modality projection from raw feature width to the shared latent width.
struct Encoder {
  std::array<numkit::Tensor, kNumModalities> projection;  // d_raw(m) × d
};

inline Encoder make_encoder(const std::array<std::size_t, kNumModalities>& raw_dims, std::size_t d,
                            std::uint64_t seed) {
  numkit::Rng rng(seed);
  Encoder e;
  for (std::size_t m = 0; m < kNumModalities; ++m)
    e.projection[m] = rng.normal_tensor({raw_dims[m], d}, 1.0 / std::sqrt(static_cast<double>(raw_dims[m])));
  return e;
}

/// Latents h^m of one conversation, one (𝒞 × d) matrix per modality.
struct ConversationLatents {
  std::array<numkit::Tensor, kNumModalities> h;
};

inline ConversationLatents encode(const corpus::Conversation& conv, const Encoder& e) {
  ConversationLatents out;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::size_t raw = e.projection[m].rows();
    numkit::Tensor x = numkit::Tensor::matrix(conv.size(), raw);
    for (std::size_t i = 0; i < conv.size(); ++i)
      for (std::size_t k = 0; k < raw; ++k) x(i, k) = conv.utterances[i].features[m][k];
    out.h[m] = numkit::matmul(x, e.projection[m]);
  }
  return out;
}

inline std::vector<ConversationLatents> encode_corpus(const corpus::Corpus& c, const Encoder& e) {
  std::vector<ConversationLatents> out;
  out.reserve(c.conversations.size());
  for (const auto& conv : c.conversations) out.push_back(encode(conv, e));
  return out;
}

}  // namespace fedrec
