#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ted4/anchor.hpp"
#include "ted4/common.hpp"

namespace ted4 {

/// Constrained window: a_s <= a_f and widths >= kMinWidth by construction.
struct ActivationParams {
  double start = 0.0;       // a_s
  double start_width = 1.0; // b_s
  double end = 1.0;         // a_f
  double end_width = 1.0;   // b_f

  double duration() const { return end - start; }

  static ActivationParams from_raw(std::span<const double> raw) {
    return {raw[0], kMinWidth + softplus(raw[2]), raw[0] + softplus(raw[1]), kMinWidth + softplus(raw[3])};
  }
};

/// Piecewise window: Gaussian rise before a_s, 1 on [a_s, a_f], Gaussian decay after a_f.
inline double activation(const ActivationParams& p, double t) {
  if (t < p.start) {
    const double u = (t - p.start) / p.start_width;
    return std::exp(-u * u);
  }
  if (t > p.end) {
    const double u = (t - p.end) / p.end_width;
    return std::exp(-u * u);
  }
  return 1.0;
}

/// d activation / d (a_s, b_s, a_f, b_f).
inline std::array<double, 4> activation_grad(const ActivationParams& p, double t) {
  if (t < p.start) {
    const double u = (t - p.start) / p.start_width;
    const double v = std::exp(-u * u);
    return {v * 2.0 * u / p.start_width, v * 2.0 * u * u / p.start_width, 0.0, 0.0};
  }
  if (t > p.end) {
    const double u = (t - p.end) / p.end_width;
    const double v = std::exp(-u * u);
    return {0.0, 0.0, v * 2.0 * u / p.end_width, v * 2.0 * u * u / p.end_width};
  }
  return {0.0, 0.0, 0.0, 0.0};
}

/// Same gradient expressed on the raw stored parameters (start, span, rise, fall).
inline std::array<double, 4> activation_grad_raw(std::span<const double> raw, double t) {
  const auto p = ActivationParams::from_raw(raw);
  const auto g = activation_grad(p, t);
  return {g[0] + g[2], g[2] * softplus_grad(raw[1]), g[1] * softplus_grad(raw[2]), g[3] * softplus_grad(raw[3])};
}

inline double time_aware_opacity(double opacity, double activation_value) { return opacity * activation_value; }

/// Per-anchor visibility over frames: visible[anchor][frame].
using VisibilityTable = std::vector<std::vector<bool>>;

/// Frustum visibility of per-frame anchor positions, positions(anchor, frame).
inline VisibilityTable frustum_visibility(std::size_t anchor_count, std::span<const double> timestamps,
                                          std::span<const Camera> cameras,
                                          const std::function<Vec3(std::size_t, std::size_t)>& positions) {
  VisibilityTable visible(anchor_count, std::vector<bool>(timestamps.size(), false));
  for (std::size_t a = 0; a < anchor_count; ++a) {
    for (std::size_t k = 0; k < timestamps.size(); ++k) {
      const Vec3 p = positions(a, k);
      visible[a][k] = std::any_of(cameras.begin(), cameras.end(), [&](const Camera& c) { return c.in_frustum(p); });
    }
  }
  return visible;
}

/// Sets each window to [earliest, latest] visible timestamp. Anchors never
/// visible keep the full window and are reported for pruning review.
inline std::vector<bool> init_activation_from_visibility(AnchorSet& set, const VisibilityTable& visible,
                                                         std::span<const double> timestamps, double width = 0.05) {
  require(visible.size() == set.size(), "visibility table does not match anchor count");
  std::vector<bool> never(set.size(), false);
  for (std::size_t a = 0; a < set.size(); ++a) {
    int first = -1, last = -1;
    for (std::size_t k = 0; k < timestamps.size(); ++k) {
      if (!visible[a][k]) continue;
      if (first < 0) first = static_cast<int>(k);
      last = static_cast<int>(k);
    }
    if (first < 0) {
      never[a] = true;
      set_window(set.anchors[a], 0.0, 1.0, width);
    } else {
      set_window(set.anchors[a], timestamps[first], timestamps[last], width);
    }
  }
  return never;
}

/// Frustum-only overload: visible when positions(anchor, frame) projects into any camera.
inline std::vector<bool> init_activation_from_visibility(AnchorSet& set, std::span<const Camera> cameras,
                                                         std::span<const double> timestamps,
                                                         const std::function<Vec3(std::size_t, std::size_t)>& positions,
                                                         double width = 0.05) {
  return init_activation_from_visibility(set, frustum_visibility(set.size(), timestamps, cameras, positions), timestamps,
                                         width);
}

/// Survivor flags: collective opacity (sum of primitive opacities, modulated
/// by tau) reaches `threshold` at some sampled time. `collective` holds the
/// unmodulated sum per anchor.
inline std::vector<bool> prune_mask(const AnchorSet& set, std::span<const double> collective, double threshold,
                                    std::span<const double> t_samples, bool time_aware = true) {
  require(!t_samples.empty(), "pruning needs at least one time sample");
  require(collective.size() == set.size(), "collective opacity count does not match anchor count");
  std::vector<bool> keep(set.size(), false);
  for (std::size_t a = 0; a < set.size(); ++a) {
    const auto p = ActivationParams::from_raw(set.anchors[a].activation());
    double best = 0.0;
    for (double t : t_samples) best = std::max(best, collective[a] * (time_aware ? activation(p, t) : 1.0));
    keep[a] = best >= threshold;
  }
  return keep;
}

/// Anchors that survive prune_mask, in their original order.
inline AnchorSet prune(const AnchorSet& set, std::span<const double> collective, double threshold,
                       std::span<const double> t_samples, bool time_aware = true) {
  const auto keep = prune_mask(set, collective, threshold, t_samples, time_aware);
  AnchorSet out;
  out.dims = set.dims;
  for (std::size_t a = 0; a < set.size(); ++a)
    if (keep[a]) out.anchors.push_back(set.anchors[a]);
  return out;
}

/// Counts of window durations: <= 0.2, (0.2, 0.8), >= 0.8.
struct DurationHistogram {
  std::array<std::size_t, 3> counts{};
  std::size_t total() const { return counts[0] + counts[1] + counts[2]; }
  double fraction(int bin) const { return total() ? static_cast<double>(counts[bin]) / total() : 0.0; }
};

/// Bin edges carry a 1e-9 slack so that windows set exactly on an edge survive
/// the softplus round trip of the stored span.
inline int duration_bin(double duration) {
  if (duration <= 0.2 + 1e-9) return 0;
  if (duration < 0.8 - 1e-9) return 1;
  return 2;
}

inline DurationHistogram duration_histogram(const AnchorSet& set) {
  DurationHistogram h;
  for (const Anchor& a : set.anchors) ++h.counts[duration_bin(ActivationParams::from_raw(a.activation()).duration())];
  return h;
}

}  // namespace ted4
