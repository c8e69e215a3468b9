#pragma once

#include <cstdint>
#include <vector>

#include "ted4/model.hpp"

namespace ted4::testing {

// Model with random anchors, weights, masks and windows. Dimensions vary with
// the seed so that layouts other than the default get exercised too.
inline Model random_model(std::uint64_t seed, bool vary_dims = true) {
  Rng rng(seed);
  ModelConfig c;
  if (vary_dims) {
    c.dims.offsets = 1 + static_cast<int>(rng.index(6));
    c.ar_chunks = 1 + static_cast<int>(rng.index(4));
    c.dims.feature_dim = c.ar_chunks * (1 + static_cast<int>(rng.index(8)));
    c.dims.temporal_dim = 1 + static_cast<int>(rng.index(16));
    c.bank_dim = 1 + static_cast<int>(rng.index(16));
    c.frame_count = 2 * (1 + static_cast<int>(rng.index(10)));
    c.deform_hidden = 4 + static_cast<int>(rng.index(12));
    c.decoder_hidden = 4 + static_cast<int>(rng.index(12));
    c.hyper_hidden = 4 + static_cast<int>(rng.index(12));
    c.ar_hidden = 4 + static_cast<int>(rng.index(12));
    c.pe_bands = 1 + static_cast<int>(rng.index(6));
    c.temporal_activation = rng.uniform() < 0.7;
  }
  std::vector<Vec3> points;
  const int n = 1 + static_cast<int>(rng.index(60));
  for (int i = 0; i < n; ++i) points.push_back({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
  Model m = init_model(c, points, seed);
  for (auto& blk : param_blocks(m))
    for (double& v : blk.values) v += rng.uniform(-0.3, 0.3);
  for (Anchor& a : m.anchors.anchors) {
    for (double& v : a.feature()) v = rng.normal() * 2.0;
    for (double& v : a.scaling()) v = rng.uniform(0.05, 0.5);
    for (double& v : a.temporal_feature()) v = rng.normal();
    for (double& l : a.offset_mask_logits()) l = rng.uniform(-2, 2);
    a.temporal_mask_logit() = rng.uniform(-2, 2);
    const double s = rng.uniform(0, 0.8);
    set_window(a, s, s + rng.uniform(0.05, 1.0 - s), rng.uniform(0.01, 0.2));
  }
  return m;
}

}  // namespace ted4::testing
