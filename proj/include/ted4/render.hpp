#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <tuple>
#include <vector>

#include "ted4/anchor.hpp"
#include "ted4/common.hpp"
#include "ted4/deformation.hpp"
#include "ted4/dual.hpp"
#include "ted4/image.hpp"
#include "ted4/mlp.hpp"

namespace ted4 {

// ---------------------------------------------------------------------------
// Attribute decoding
// ---------------------------------------------------------------------------

/// Geometry decoder f' -> K x (3 scale + 4 rotation); appearance decoder
/// f -> K x (3 color + 1 opacity).
struct AttributeDecoders {
  Mlp geometry;
  Mlp appearance;

  AttributeDecoders() = default;
  AttributeDecoders(int feature_dim, int offsets, int hidden = 32)
      : geometry({feature_dim, hidden, 7 * offsets}), appearance({feature_dim, hidden, 4 * offsets}) {}

  int offsets() const { return geometry.out_dim() / 7; }
};

inline constexpr double kMinScale = 1e-6;
inline constexpr double kMaxScale = 1e2;

/// Decoder-side view of one anchor: position already deformed.
struct DecodeInput {
  Vec3 position{};
  std::span<const double> deformed_feature;
  std::span<const double> feature;
  std::span<const double> scaling;
  std::span<const double> offsets;
  std::span<const double> offset_logits;
  double activation = 1.0;
  int anchor_index = 0;
};

struct DecodeTrace {
  Mlp::Cache geometry;
  Mlp::Cache appearance;
};

/// Decodes all K slots. Masked slots keep zero opacity so that gradients can
/// still reach their mask logits.
inline std::vector<GaussianPrimitive> decode_slots(const DecodeInput& in, const AttributeDecoders& dec, DecodeTrace& trace) {
  const int k_count = dec.offsets();
  dec.geometry.forward(in.deformed_feature, trace.geometry);
  dec.appearance.forward(in.feature, trace.appearance);
  const auto g = trace.geometry.output();
  const auto a = trace.appearance.output();
  std::vector<GaussianPrimitive> prims(k_count);
  for (int i = 0; i < k_count; ++i) {
    GaussianPrimitive& p = prims[i];
    for (int c = 0; c < 3; ++c) {
      p.mean[c] = in.position[c] + in.scaling[c] * in.offsets[3 * i + c];
      p.scale[c] = std::clamp(std::abs(in.scaling[c]) * std::exp(g[7 * i + c]), kMinScale, kMaxScale);
      p.color[c] = sigmoid(a[4 * i + c]);
    }
    std::array<double, 4> r{g[7 * i + 3] + 1.0, g[7 * i + 4], g[7 * i + 5], g[7 * i + 6]};
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
    p.rotation = n > 0.0 ? std::array<double, 4>{r[0] / n, r[1] / n, r[2] / n, r[3] / n}
                         : std::array<double, 4>{1.0, 0.0, 0.0, 0.0};
    const double mask = in.offset_logits[i] > 0.0 ? 1.0 : 0.0;
    p.opacity = mask * sigmoid(a[4 * i + 3]);
    p.activation = in.activation;
    p.anchor = in.anchor_index;
    p.slot = i;
  }
  return prims;
}

struct PrimitiveGrad {
  Vec3 mean{};
  Vec3 scale{};
  std::array<double, 4> rotation{};
  Vec3 color{};
  double opacity = 0.0;
  double activation = 0.0;
};

/// Gradients flowing out of one anchor's decode.
struct DecodeGrad {
  Vec3 position{};
  std::vector<double> deformed_feature;
  std::vector<double> feature;
  Vec3 scaling{};
  std::vector<double> offsets;
  std::vector<double> offset_logits;  // straight-through estimate
  double activation = 0.0;
};

inline DecodeGrad decode_backward(const DecodeInput& in, const DecodeTrace& trace, const AttributeDecoders& dec,
                                  std::span<const PrimitiveGrad> grads, AttributeDecoders& grad_dec) {
  const int k_count = dec.offsets();
  const auto g = trace.geometry.output();
  const auto a = trace.appearance.output();
  DecodeGrad out;
  out.offsets.assign(3 * k_count, 0.0);
  out.offset_logits.assign(k_count, 0.0);
  std::vector<double> g_geo(g.size(), 0.0), g_app(a.size(), 0.0);
  for (int i = 0; i < k_count; ++i) {
    const PrimitiveGrad& pg = grads[i];
    for (int c = 0; c < 3; ++c) {
      out.position[c] += pg.mean[c];
      out.scaling[c] += pg.mean[c] * in.offsets[3 * i + c];
      out.offsets[3 * i + c] += pg.mean[c] * in.scaling[c];
      const double base = std::abs(in.scaling[c]) * std::exp(g[7 * i + c]);
      if (base > kMinScale && base < kMaxScale) {
        g_geo[7 * i + c] += pg.scale[c] * base;
        const double sgn = in.scaling[c] > 0.0 ? 1.0 : (in.scaling[c] < 0.0 ? -1.0 : 0.0);
        out.scaling[c] += pg.scale[c] * sgn * std::exp(g[7 * i + c]);
      }
      const double col = sigmoid(a[4 * i + c]);
      g_app[4 * i + c] += pg.color[c] * col * (1.0 - col);
    }
    std::array<double, 4> r{g[7 * i + 3] + 1.0, g[7 * i + 4], g[7 * i + 5], g[7 * i + 6]};
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
    if (n > 0.0) {
      double qdotg = 0.0;
      for (int j = 0; j < 4; ++j) qdotg += (r[j] / n) * pg.rotation[j];
      for (int j = 0; j < 4; ++j) g_geo[7 * i + 3 + j] += (pg.rotation[j] - (r[j] / n) * qdotg) / n;
    }
    const double mask = in.offset_logits[i] > 0.0 ? 1.0 : 0.0;
    const double op = sigmoid(a[4 * i + 3]);
    g_app[4 * i + 3] += pg.opacity * mask * op * (1.0 - op);
    const double m_soft = sigmoid(in.offset_logits[i]);
    out.offset_logits[i] = pg.opacity * op * m_soft * (1.0 - m_soft);
    out.activation += pg.activation;
  }
  out.deformed_feature = dec.geometry.backward(trace.geometry, g_geo, grad_dec.geometry.params());
  out.feature = dec.appearance.backward(trace.appearance, g_app, grad_dec.appearance.params());
  return out;
}

/// Inference decode: primitives of active offsets only.
inline std::vector<GaussianPrimitive> decode_primitives(const Anchor& anchor, const Deformed& deformed,
                                                        const AttributeDecoders& dec, double activation_value = 1.0,
                                                        int anchor_index = 0) {
  require(static_cast<int>(deformed.feature.size()) == anchor.dims.feature_dim, "deformed feature dimension mismatch");
  DecodeInput in{deformed.position, deformed.feature, anchor.feature(), anchor.scaling(), anchor.offsets(),
                 anchor.offset_mask_logits(), activation_value, anchor_index};
  DecodeTrace trace;
  auto all = decode_slots(in, dec, trace);
  std::vector<GaussianPrimitive> out;
  for (int i = 0; i < static_cast<int>(all.size()); ++i) {
    if (anchor.offset_active(i)) out.push_back(all[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splat projection
// ---------------------------------------------------------------------------

template <class T>
struct Splat2D {
  T u, v;           // pixel-space center
  T ca, cb, cc;     // conic (inverse 2D covariance)
  T sa, sb, sc;     // 2D covariance
  T depth;
};

/// Perspective-affine (EWA) projection of a 3D Gaussian. `low_pass` is added
/// to the diagonal of the 2D covariance.
template <class T>
Splat2D<T> project_splat(const std::array<T, 3>& mean, const std::array<T, 3>& scale, const std::array<T, 4>& q,
                         const Camera& cam, double low_pass) {
  const auto& R = cam.rotation;
  std::array<T, 3> pc;
  for (int i = 0; i < 3; ++i) pc[i] = T(R[i * 3]) * mean[0] + T(R[i * 3 + 1]) * mean[1] + T(R[i * 3 + 2]) * mean[2] + T(cam.translation[i]);
  const T& w = q[0];
  const T& x = q[1];
  const T& y = q[2];
  const T& z = q[3];
  // Rotation matrix of the unit quaternion, row-major.
  const T one(1.0), two(2.0);
  const std::array<T, 9> rot{one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y),
                             two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x),
                             two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)};
  // M = rot * diag(scale); cov3 = M M^T
  std::array<T, 9> m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i * 3 + j] = rot[i * 3 + j] * scale[j];
  std::array<T, 9> cov;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) cov[i * 3 + j] = m[i * 3] * m[j * 3] + m[i * 3 + 1] * m[j * 3 + 1] + m[i * 3 + 2] * m[j * 3 + 2];
  const T inv_z = one / pc[2];
  const T j00 = T(cam.fx) * inv_z, j02 = -T(cam.fx) * pc[0] * inv_z * inv_z;
  const T j11 = T(cam.fy) * inv_z, j12 = -T(cam.fy) * pc[1] * inv_z * inv_z;
  // A = J * Rcam (2x3)
  std::array<T, 6> A;
  for (int j = 0; j < 3; ++j) {
    A[j] = j00 * T(R[j]) + j02 * T(R[6 + j]);
    A[3 + j] = j11 * T(R[3 + j]) + j12 * T(R[6 + j]);
  }
  std::array<T, 6> AC;  // A * cov
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      AC[i * 3 + j] = A[i * 3] * cov[j] + A[i * 3 + 1] * cov[3 + j] + A[i * 3 + 2] * cov[6 + j];
  Splat2D<T> s;
  s.sa = AC[0] * A[0] + AC[1] * A[1] + AC[2] * A[2] + T(low_pass);
  s.sb = AC[0] * A[3] + AC[1] * A[4] + AC[2] * A[5];
  s.sc = AC[3] * A[3] + AC[4] * A[4] + AC[5] * A[5] + T(low_pass);
  const T det = s.sa * s.sc - s.sb * s.sb;
  s.ca = s.sc / det;
  s.cb = -s.sb / det;
  s.cc = s.sa / det;
  s.u = T(cam.fx) * pc[0] * inv_z + T(cam.cx);
  s.v = T(cam.fy) * pc[1] * inv_z + T(cam.cy);
  s.depth = pc[2];
  return s;
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

struct RenderSettings {
  Vec3 background{0.0, 0.0, 0.0};
  double low_pass = 0.3;         // 2D dilation, pixels^2
  double max_alpha = 0.99;
  double cutoff_sigma = 3.0;     // footprint truncation
  double max_condition = 1e8;    // degenerate-covariance threshold
  double min_transmittance = 1e-4;  // compositing stops once a pixel is this opaque
};

struct RenderedImage {
  Image color;
  std::vector<double> alpha;  // accumulated opacity per pixel
  int skipped_degenerate = 0;
  int skipped_behind = 0;
  std::vector<double> anchor_weight;  // max per-pixel compositing weight per anchor (optional)
};

/// Projected splat ready for compositing, plus sort key.
struct ProjectedSplat {
  int index = 0;  // into the primitive list
  double u = 0, v = 0, ca = 0, cb = 0, cc = 0, depth = 0;
  double alpha_scale = 0;  // opacity * activation
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // inclusive pixel bounds
};

namespace detail {

inline double condition_number(double a, double b, double c) {
  const double tr = 0.5 * (a + c);
  const double disc = std::sqrt(std::max(0.0, 0.25 * (a - c) * (a - c) + b * b));
  const double lmax = tr + disc, lmin = tr - disc;
  if (lmin <= 0.0) return std::numeric_limits<double>::infinity();
  return lmax / lmin;
}

}  // namespace detail

/// Projects, culls and depth-sorts. Ties in depth are broken by canonical
/// (anchor, slot) so the result does not depend on input order.
inline std::vector<ProjectedSplat> prepare_splats(std::span<const GaussianPrimitive> prims, const Camera& cam,
                                                  const RenderSettings& rs, int& degenerate, int& behind) {
  std::vector<ProjectedSplat> out;
  out.reserve(prims.size());
  degenerate = behind = 0;
  for (int i = 0; i < static_cast<int>(prims.size()); ++i) {
    const GaussianPrimitive& p = prims[i];
    const Vec3 pc = cam.to_camera(p.mean);
    if (pc[2] <= Camera::kNear) {
      ++behind;
      continue;
    }
    const auto s = project_splat<double>(p.mean, p.scale, p.rotation, cam, rs.low_pass);
    const double cond = detail::condition_number(s.sa, s.sb, s.sc);
    if (!(cond <= rs.max_condition) || !std::isfinite(s.u) || !std::isfinite(s.v)) {
      ++degenerate;
      continue;
    }
    const double tr = 0.5 * (s.sa + s.sc);
    const double lmax = tr + std::sqrt(std::max(0.0, 0.25 * (s.sa - s.sc) * (s.sa - s.sc) + s.sb * s.sb));
    const double radius = rs.cutoff_sigma * std::sqrt(lmax);
    ProjectedSplat ps;
    ps.index = i;
    ps.u = s.u;
    ps.v = s.v;
    ps.ca = s.ca;
    ps.cb = s.cb;
    ps.cc = s.cc;
    ps.depth = s.depth;
    ps.alpha_scale = p.opacity * p.activation;
    // pixel centers sit at col + 0.5
    ps.x0 = std::max(0, static_cast<int>(std::ceil(s.u - radius - 0.5)));
    ps.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.u + radius - 0.5)));
    ps.y0 = std::max(0, static_cast<int>(std::ceil(s.v - radius - 0.5)));
    ps.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.v + radius - 0.5)));
    if (ps.x0 > ps.x1 || ps.y0 > ps.y1) continue;
    out.push_back(ps);
  }
  std::sort(out.begin(), out.end(), [&](const ProjectedSplat& a, const ProjectedSplat& b) {
    return std::make_tuple(a.depth, prims[a.index].anchor, prims[a.index].slot, a.index) <
           std::make_tuple(b.depth, prims[b.index].anchor, prims[b.index].slot, b.index);
  });
  return out;
}

/// Evaluates one splat at pixel center (px, py). Returns false outside the cutoff.
inline bool splat_alpha(const ProjectedSplat& s, double px, double py, const RenderSettings& rs, double& alpha,
                        double& gauss, double& dx, double& dy) {
  dx = px - s.u;
  dy = py - s.v;
  const double maha = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
  if (maha > rs.cutoff_sigma * rs.cutoff_sigma || maha < 0.0) return false;
  gauss = std::exp(-0.5 * maha);
  alpha = std::min(rs.max_alpha, s.alpha_scale * gauss);
  return true;
}

/// Per-tile lists of splat indices (into the sorted list), in depth order.
struct TileBins {
  static constexpr int kTile = 8;
  int tiles_x = 0, tiles_y = 0;
  std::vector<std::vector<int>> lists;

  TileBins(const std::vector<ProjectedSplat>& splats, int width, int height)
      : tiles_x((width + kTile - 1) / kTile), tiles_y((height + kTile - 1) / kTile), lists(tiles_x * tiles_y) {
    for (int i = 0; i < static_cast<int>(splats.size()); ++i) {
      const auto& s = splats[i];
      for (int ty = s.y0 / kTile; ty <= s.y1 / kTile; ++ty)
        for (int tx = s.x0 / kTile; tx <= s.x1 / kTile; ++tx) lists[ty * tiles_x + tx].push_back(i);
    }
  }
  const std::vector<int>& at(int row, int col) const { return lists[(row / kTile) * tiles_x + col / kTile]; }
};

/// Front-to-back alpha compositing of depth-sorted splats.
inline RenderedImage render(std::span<const GaussianPrimitive> prims, const Camera& cam, const RenderSettings& rs = {},
                            int track_anchors = 0) {
  RenderedImage out;
  out.color = Image(cam.width, cam.height);
  out.alpha.assign(static_cast<std::size_t>(cam.width) * cam.height, 0.0);
  if (track_anchors > 0) out.anchor_weight.assign(track_anchors, 0.0);
  const auto splats = prepare_splats(prims, cam, rs, out.skipped_degenerate, out.skipped_behind);
  const TileBins bins(splats, cam.width, cam.height);
  std::vector<double> pixel_weight(track_anchors > 0 ? track_anchors : 0, 0.0);
  std::vector<int> touched;
  for (int row = 0; row < cam.height; ++row) {
    for (int col = 0; col < cam.width; ++col) {
      const double px = col + 0.5, py = row + 0.5;
      double trans = 1.0;
      Vec3 c{0.0, 0.0, 0.0};
      for (int si : bins.at(row, col)) {
        const ProjectedSplat& s = splats[si];
        if (col < s.x0 || col > s.x1 || row < s.y0 || row > s.y1) continue;
        double alpha, gauss, dx, dy;
        if (!splat_alpha(s, px, py, rs, alpha, gauss, dx, dy)) continue;
        const double w = alpha * trans;
        const GaussianPrimitive& p = prims[s.index];
        for (int ch = 0; ch < 3; ++ch) c[ch] += p.color[ch] * w;
        if (track_anchors > 0 && p.anchor >= 0 && p.anchor < track_anchors) {
          if (pixel_weight[p.anchor] == 0.0) touched.push_back(p.anchor);
          pixel_weight[p.anchor] += w;
        }
        trans *= 1.0 - alpha;
        if (trans < rs.min_transmittance) break;
      }
      for (int ch = 0; ch < 3; ++ch) out.color.at(row, col, ch) = std::clamp(c[ch] + trans * rs.background[ch], 0.0, 1.0);
      out.alpha[static_cast<std::size_t>(row) * cam.width + col] = 1.0 - trans;
      for (int a : touched) {
        out.anchor_weight[a] = std::max(out.anchor_weight[a], pixel_weight[a]);
        pixel_weight[a] = 0.0;
      }
      touched.clear();
    }
  }
  return out;
}

/// Gradients of a scalar loss w.r.t. every primitive, given dL/d(pixel color).
inline std::vector<PrimitiveGrad> render_backward(std::span<const GaussianPrimitive> prims, const Camera& cam,
                                                  const Image& grad_image, const RenderSettings& rs = {}) {
  std::vector<PrimitiveGrad> grads(prims.size());
  int degenerate = 0, behind = 0;
  const auto splats = prepare_splats(prims, cam, rs, degenerate, behind);
  const TileBins bins(splats, cam.width, cam.height);
  // Per-splat 2D gradients: u, v, ca, cb, cc.
  std::vector<std::array<double, 5>> g2d(splats.size(), std::array<double, 5>{});
  struct Hit {
    int splat;
    double alpha, gauss, dx, dy, trans;
  };
  std::vector<Hit> hits;
  for (int row = 0; row < cam.height; ++row) {
    for (int col = 0; col < cam.width; ++col) {
      const double px = col + 0.5, py = row + 0.5;
      Vec3 gc{grad_image.at(row, col, 0), grad_image.at(row, col, 1), grad_image.at(row, col, 2)};
      if (gc[0] == 0.0 && gc[1] == 0.0 && gc[2] == 0.0) continue;
      hits.clear();
      double trans = 1.0;
      for (int si : bins.at(row, col)) {
        const ProjectedSplat& s = splats[si];
        if (col < s.x0 || col > s.x1 || row < s.y0 || row > s.y1) continue;
        Hit h{si, 0, 0, 0, 0, trans};
        if (!splat_alpha(s, px, py, rs, h.alpha, h.gauss, h.dx, h.dy)) continue;
        hits.push_back(h);
        trans *= 1.0 - h.alpha;
        if (trans < rs.min_transmittance) break;
      }
      Vec3 behind_color{trans * rs.background[0], trans * rs.background[1], trans * rs.background[2]};
      for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
        const ProjectedSplat& s = splats[it->splat];
        const GaussianPrimitive& p = prims[s.index];
        PrimitiveGrad& pg = grads[s.index];
        const double w = it->alpha * it->trans;
        double g_alpha = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          pg.color[ch] += gc[ch] * w;
          g_alpha += gc[ch] * (p.color[ch] * it->trans - behind_color[ch] / (1.0 - it->alpha));
          behind_color[ch] += p.color[ch] * w;
        }
        if (s.alpha_scale * it->gauss >= rs.max_alpha) continue;  // clamped
        const double g_scale = g_alpha * it->gauss;
        pg.opacity += g_scale * p.activation;
        pg.activation += g_scale * p.opacity;
        const double g_power = g_alpha * s.alpha_scale * it->gauss;
        auto& g = g2d[it->splat];
        g[0] += g_power * (s.ca * it->dx + s.cb * it->dy);
        g[1] += g_power * (s.cb * it->dx + s.cc * it->dy);
        g[2] += g_power * (-0.5 * it->dx * it->dx);
        g[3] += g_power * (-it->dx * it->dy);
        g[4] += g_power * (-0.5 * it->dy * it->dy);
      }
    }
  }
  // Chain the 2D gradients through the projection Jacobian.
  using D = Dual<10>;
  for (std::size_t k = 0; k < splats.size(); ++k) {
    const auto& g = g2d[k];
    if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0 && g[3] == 0.0 && g[4] == 0.0) continue;
    const GaussianPrimitive& p = prims[splats[k].index];
    std::array<D, 3> mean, scale;
    std::array<D, 4> rot;
    for (int c = 0; c < 3; ++c) {
      mean[c] = D::variable(p.mean[c], c);
      scale[c] = D::variable(p.scale[c], 3 + c);
    }
    for (int c = 0; c < 4; ++c) rot[c] = D::variable(p.rotation[c], 6 + c);
    const auto s = project_splat<D>(mean, scale, rot, cam, rs.low_pass);
    PrimitiveGrad& pg = grads[splats[k].index];
    for (int j = 0; j < 10; ++j) {
      const double d = g[0] * s.u.d[j] + g[1] * s.v.d[j] + g[2] * s.ca.d[j] + g[3] * s.cb.d[j] + g[4] * s.cc.d[j];
      if (j < 3) pg.mean[j] += d;
      else if (j < 6) pg.scale[j - 3] += d;
      else pg.rotation[j - 6] += d;
    }
  }
  return grads;
}

}  // namespace ted4
