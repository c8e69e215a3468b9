#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "ted4/common.hpp"
#include "ted4/image.hpp"

namespace ted4 {

/// Per-anchor attribute dimensions. Identical for every anchor of a set.
struct AnchorDims {
  int offsets = 5;          // K
  int feature_dim = 32;     // d_f
  int temporal_dim = 16;    // d

  bool operator==(const AnchorDims&) const = default;

  // Flat layout: x | f | l | O | phi | tau(4) | offset mask logits | temporal mask logit
  std::size_t position_at() const { return 0; }
  std::size_t feature_at() const { return 3; }
  std::size_t scaling_at() const { return feature_at() + feature_dim; }
  std::size_t offsets_at() const { return scaling_at() + 3; }
  std::size_t temporal_feature_at() const { return offsets_at() + 3 * static_cast<std::size_t>(offsets); }
  std::size_t activation_at() const { return temporal_feature_at() + temporal_dim; }
  std::size_t offset_mask_at() const { return activation_at() + 4; }
  std::size_t temporal_mask_at() const { return offset_mask_at() + offsets; }
  std::size_t size() const { return temporal_mask_at() + 1; }
};

/// Raw (unconstrained) temporal window parameters as stored and coded:
/// start a_s, span pre-activation (a_f = a_s + softplus(span)), and width
/// pre-activations (b = floor + softplus(raw)).
inline constexpr double kMinWidth = 1e-3;

/// One anchor. All learnable values live in `data` so that gradients and
/// optimizer moments can reuse the exact same shape.
struct Anchor {
  AnchorDims dims;
  int id = 0;  // creation index, tie-break for canonical order
  std::vector<double> data;

  Anchor() = default;
  explicit Anchor(const AnchorDims& d, int id_ = 0) : dims(d), id(id_), data(d.size(), 0.0) {}

  std::span<double> position() { return {data.data() + dims.position_at(), 3}; }
  std::span<const double> position() const { return {data.data() + dims.position_at(), 3}; }
  Vec3 position_vec() const { return {data[0], data[1], data[2]}; }
  std::span<double> feature() { return {data.data() + dims.feature_at(), static_cast<std::size_t>(dims.feature_dim)}; }
  std::span<const double> feature() const {
    return {data.data() + dims.feature_at(), static_cast<std::size_t>(dims.feature_dim)};
  }
  std::span<double> scaling() { return {data.data() + dims.scaling_at(), 3}; }
  std::span<const double> scaling() const { return {data.data() + dims.scaling_at(), 3}; }
  std::span<double> offsets() { return {data.data() + dims.offsets_at(), 3 * static_cast<std::size_t>(dims.offsets)}; }
  std::span<const double> offsets() const {
    return {data.data() + dims.offsets_at(), 3 * static_cast<std::size_t>(dims.offsets)};
  }
  std::span<double> temporal_feature() {
    return {data.data() + dims.temporal_feature_at(), static_cast<std::size_t>(dims.temporal_dim)};
  }
  std::span<const double> temporal_feature() const {
    return {data.data() + dims.temporal_feature_at(), static_cast<std::size_t>(dims.temporal_dim)};
  }
  std::span<double> activation() { return {data.data() + dims.activation_at(), 4}; }
  std::span<const double> activation() const { return {data.data() + dims.activation_at(), 4}; }
  std::span<double> offset_mask_logits() {
    return {data.data() + dims.offset_mask_at(), static_cast<std::size_t>(dims.offsets)};
  }
  std::span<const double> offset_mask_logits() const {
    return {data.data() + dims.offset_mask_at(), static_cast<std::size_t>(dims.offsets)};
  }
  double& temporal_mask_logit() { return data[dims.temporal_mask_at()]; }
  double temporal_mask_logit() const { return data[dims.temporal_mask_at()]; }

  double offset_mask_soft(int i) const { return sigmoid(offset_mask_logits()[i]); }
  double temporal_mask_soft() const { return sigmoid(temporal_mask_logit()); }
  /// Binarized masks: on iff the soft value exceeds 0.5.
  bool offset_active(int i) const { return offset_mask_logits()[i] > 0.0; }
  bool dynamic() const { return temporal_mask_logit() > 0.0; }
};

struct AnchorSet {
  AnchorDims dims;
  std::vector<Anchor> anchors;

  std::size_t size() const { return anchors.size(); }
  bool empty() const { return anchors.empty(); }
};

struct GaussianPrimitive {
  Vec3 mean{};
  Vec3 scale{1.0, 1.0, 1.0};
  std::array<double, 4> rotation{1.0, 0.0, 0.0, 0.0};  // unit quaternion (w, x, y, z)
  Vec3 color{};
  double opacity = 0.0;
  double activation = 1.0;  // tau(t) of the owning anchor
  int anchor = 0;           // canonical index of the owning anchor
  int slot = 0;             // primitive index within the anchor
};

/// Pinhole camera with a world-to-camera rigid transform; +z looks forward,
/// pixel (col, row) samples at (col + 0.5, row + 0.5).
struct Camera {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Vec3 translation{};

  Vec3 to_camera(const Vec3& p) const {
    const auto& r = rotation;
    return {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + translation[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + translation[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + translation[2]};
  }

  static constexpr double kNear = 0.01;

  bool in_frustum(const Vec3& world) const {
    const Vec3 c = to_camera(world);
    if (c[2] <= kNear) return false;
    const double u = fx * c[0] / c[2] + cx, v = fy * c[1] / c[2] + cy;
    return u >= 0.0 && u < width && v >= 0.0 && v < height;
  }

  void validate() const {
    require(width >= 8 && height >= 8, "camera image must be at least 8x8");
    require(fx > 0 && fy > 0, "camera focal lengths must be positive");
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += rotation[i * 3 + k] * rotation[j * 3 + k];
        require(std::abs(d - (i == j ? 1.0 : 0.0)) <= 1e-6, "camera rotation is not orthonormal");
      }
    }
  }

  /// Camera at `eye` looking at `target` with world -y as up.
  static Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double focal) {
    Vec3 fwd = target - eye;
    fwd = (1.0 / norm(fwd)) * fwd;
    const Vec3 up{0.0, -1.0, 0.0};
    Vec3 right{up[1] * fwd[2] - up[2] * fwd[1], up[2] * fwd[0] - up[0] * fwd[2], up[0] * fwd[1] - up[1] * fwd[0]};
    right = (-1.0 / norm(right)) * right;
    const Vec3 down{fwd[1] * right[2] - fwd[2] * right[1], fwd[2] * right[0] - fwd[0] * right[2],
                    fwd[0] * right[1] - fwd[1] * right[0]};
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.width = width;
    cam.height = height;
    cam.rotation = {right[0], right[1], right[2], down[0], down[1], down[2], fwd[0], fwd[1], fwd[2]};
    for (int i = 0; i < 3; ++i) {
      cam.translation[i] = -(cam.rotation[i * 3] * eye[0] + cam.rotation[i * 3 + 1] * eye[1] + cam.rotation[i * 3 + 2] * eye[2]);
    }
    return cam;
  }
};

/// Multi-camera synthetic video. frames[camera][frame].
struct ToyScene {
  std::string name;
  std::vector<Camera> cameras;
  std::vector<std::vector<Image>> frames;
  std::vector<double> timestamps;
  std::vector<Vec3> points;  // initialization point cloud

  int frame_count() const { return static_cast<int>(timestamps.size()); }

  void validate() const {
    require(!cameras.empty(), "scene has no cameras");
    require(frame_count() >= 2 && frame_count() % 2 == 0, "scene frame count must be even and at least 2");
    for (std::size_t k = 1; k < timestamps.size(); ++k) {
      require(timestamps[k] > timestamps[k - 1], "scene timestamps must be strictly increasing");
    }
    require(timestamps.front() >= 0.0 && timestamps.back() <= 1.0, "scene timestamps must lie in [0,1]");
    require(frames.size() == cameras.size(), "scene needs one frame sequence per camera");
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      cameras[c].validate();
      require(static_cast<int>(frames[c].size()) == frame_count(), "frame sequence length does not match timestamps");
      for (const Image& img : frames[c]) {
        require(img.width == cameras[0].width && img.height == cameras[0].height, "scene frames must share resolution");
      }
    }
  }
};

/// mu_i = x + l * O_i, component-wise.
inline std::vector<Vec3> gaussian_means(const Anchor& a) {
  std::vector<Vec3> means(a.dims.offsets);
  const auto x = a.position();
  const auto l = a.scaling();
  const auto o = a.offsets();
  for (int i = 0; i < a.dims.offsets; ++i) {
    for (int c = 0; c < 3; ++c) means[i][c] = x[c] + l[c] * o[3 * i + c];
  }
  return means;
}

/// Lexicographic order on fp16-rounded positions, ties broken by creation id.
inline bool canonical_less(const Anchor& a, const Anchor& b) {
  const auto key = [](const Anchor& x) {
    return std::make_tuple(round_half(x.data[0]), round_half(x.data[1]), round_half(x.data[2]), x.id);
  };
  return key(a) < key(b);
}

inline void canonical_sort(AnchorSet& set) { std::stable_sort(set.anchors.begin(), set.anchors.end(), canonical_less); }

struct AnchorInit {
  AnchorDims dims;
  std::uint64_t seed = 0;
  double offset_mask_logit = 2.0;
  double temporal_mask_logit = 2.0;
  double window_width = 0.05;
};

/// Sets the temporal window of `a` to [start, end] with both transition widths `width`.
inline void set_window(Anchor& a, double start, double end, double width) {
  auto tau = a.activation();
  tau[0] = start;
  tau[1] = softplus_inverse(std::max(end - start, 1e-6));
  tau[2] = tau[3] = softplus_inverse(std::max(width - kMinWidth, 1e-9));
}

/// One anchor per occupied voxel, placed at the voxel center (floor rule).
inline AnchorSet init_anchor_set(std::span<const Vec3> points, double voxel_size, const AnchorInit& cfg) {
  require(!points.empty(), "no points");
  require(voxel_size > 0.0, "voxel size must be positive");
  std::map<std::array<long long, 3>, int> voxels;
  for (const Vec3& p : points) {
    std::array<long long, 3> key{};
    for (int c = 0; c < 3; ++c) key[c] = static_cast<long long>(std::floor(p[c] / voxel_size));
    voxels.emplace(key, 0);
  }
  AnchorSet set;
  set.dims = cfg.dims;
  Rng rng(cfg.seed);
  int id = 0;
  for (const auto& [key, unused] : voxels) {
    Anchor a(cfg.dims, id++);
    for (int c = 0; c < 3; ++c) a.position()[c] = (static_cast<double>(key[c]) + 0.5) * voxel_size;
    for (double& l : a.scaling()) l = voxel_size;
    for (double& o : a.offsets()) o = rng.uniform(-0.5, 0.5);
    for (double& m : a.offset_mask_logits()) m = cfg.offset_mask_logit;
    a.temporal_mask_logit() = cfg.temporal_mask_logit;
    set_window(a, 0.0, 1.0, cfg.window_width);
    set.anchors.push_back(std::move(a));
  }
  canonical_sort(set);
  return set;
}

/// Replaces positions with their 16-bit float values. Idempotent.
inline AnchorSet round_positions_fp16(AnchorSet set) {
  for (Anchor& a : set.anchors) {
    for (double& x : a.position()) x = round_half(x);
  }
  return set;
}

}  // namespace ted4
