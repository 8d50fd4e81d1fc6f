#pragma once

#include <array>
#include <vector>

#include "fedrec/modality.hpp"
#include "fedrec/nn.hpp"
#include "fedrec/numkit/rng.hpp"

namespace fedrec::testutil {

// Small dimensions keep finite-difference sweeps fast.
inline nn::ModelDims tiny_dims() {
  nn::ModelDims d;
  d.d = 8;
  d.s_tok = 2;
  d.p_tok = 4;
  d.heads = 2;
  d.mlp_hidden = 6;
  d.n_classes = 3;
  return d;
}

inline std::array<numkit::Tensor, kNumModalities> random_latents(numkit::Rng& rng, std::size_t n, std::size_t d,
                                                                double scale = 1.0) {
  std::array<numkit::Tensor, kNumModalities> h;
  for (auto& t : h) t = rng.normal_tensor({n, d}, scale);
  return h;
}

inline std::vector<int> random_labels(numkit::Rng& rng, std::size_t n, int classes) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.uniform_int(0, static_cast<std::size_t>(classes - 1)));
  return y;
}

}  // namespace fedrec::testutil
