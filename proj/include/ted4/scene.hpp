#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ted4/anchor.hpp"
#include "ted4/common.hpp"
#include "ted4/image.hpp"
#include "ted4/render.hpp"

namespace ted4 {

inline const std::vector<std::string>& scene_names() {
  static const std::vector<std::string> names{"static-room", "slider", "occluder"};
  return names;
}

struct SynthOptions {
  int width = 48;
  int height = 48;
  int frames = 20;
  std::uint64_t seed = 0;
};

namespace detail {

struct SceneElements {
  std::vector<GaussianPrimitive> fixed;
  std::vector<GaussianPrimitive> blob;  // moved by `blob_center(t)` relative to the origin
  bool moving = false;
  Vec3 path_from{}, path_to{};

  Vec3 blob_center(double t) const { return path_from + t * (path_to - path_from); }

  std::vector<GaussianPrimitive> at(double t) const {
    std::vector<GaussianPrimitive> out = fixed;
    const Vec3 c = blob_center(t);
    for (GaussianPrimitive p : blob) {
      p.mean = p.mean + c;
      out.push_back(p);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].anchor = static_cast<int>(i);
      out[i].slot = 0;
    }
    return out;
  }
};

inline GaussianPrimitive splat(const Vec3& mean, const Vec3& scale, const Vec3& color, double opacity = 0.95) {
  GaussianPrimitive p;
  p.mean = mean;
  p.scale = scale;
  p.color = color;
  p.opacity = opacity;
  return p;
}

// Back wall at z = -1 with a smooth two-tone pattern.
inline void add_wall(std::vector<GaussianPrimitive>& out, Rng& rng) {
  for (int i = 0; i < 24; ++i)
    for (int j = 0; j < 24; ++j) {
      const double x = -1.15 + 0.1 * i, y = -1.15 + 0.1 * j;
      const double s = 0.5 + 0.5 * std::sin(2.5 * x) * std::cos(2.0 * y);
      const Vec3 color{0.25 + 0.45 * s, 0.3 + 0.2 * (1 - s), 0.55 - 0.2 * s + 0.02 * rng.normal()};
      out.push_back(splat({x, y, -1.0}, {0.06, 0.06, 0.01}, color));
    }
}

inline void add_ball(std::vector<GaussianPrimitive>& out, const Vec3& center, double radius, const Vec3& color, Rng& rng,
                     int count) {
  for (int i = 0; i < count; ++i) {
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    d = (radius * std::cbrt(rng.uniform()) / std::max(norm(d), 1e-9)) * d;
    const double shade = 0.85 + 0.15 * rng.uniform();
    out.push_back(splat(center + d, {0.35 * radius, 0.35 * radius, 0.35 * radius},
                        {shade * color[0], shade * color[1], shade * color[2]}));
  }
}

inline SceneElements build(const std::string& name, Rng& rng) {
  SceneElements s;
  add_wall(s.fixed, rng);
  add_ball(s.fixed, {-0.55, 0.45, -0.4}, 0.22, {0.8, 0.25, 0.2}, rng, 40);
  add_ball(s.fixed, {0.5, 0.5, -0.2}, 0.18, {0.2, 0.7, 0.3}, rng, 30);
  if (name == "static-room") return s;
  if (name == "slider") {
    add_ball(s.blob, {0, 0, 0}, 0.15, {0.95, 0.85, 0.2}, rng, 30);
    s.moving = true;
    s.path_from = {-0.7, -0.2, 0.2};
    s.path_to = {0.7, -0.2, 0.2};
    return s;
  }
  if (name == "occluder") {
    // front panel with a narrow vertical gap at x = 0
    for (int i = 0; i < 18; ++i)
      for (int j = 0; j < 10; ++j) {
        const double x = -0.85 + 0.1 * i, y = -0.65 + 0.1 * j;
        if (std::abs(x) < 0.1) continue;
        s.fixed.push_back(splat({x + (x > 0 ? 0.05 : -0.05), y, 0.5}, {0.06, 0.06, 0.01}, {0.35, 0.35, 0.4}, 0.99));
      }
    add_ball(s.blob, {0, 0, 0}, 0.12, {0.95, 0.85, 0.2}, rng, 24);
    s.moving = true;
    s.path_from = {-0.9, -0.2, 0.35};
    s.path_to = {0.9, -0.2, 0.35};
    return s;
  }
  fail(ErrorKind::usage, "unknown scene '" + name + "' (expected static-room, slider or occluder)");
}

}  // namespace detail

inline std::vector<Camera> default_cameras(int width, int height) {
  const double focal = 80.0 * width / 48.0;
  const Vec3 target{0.0, 0.0, -0.2};
  return {Camera::look_at({-0.6, -0.3, 3.0}, target, width, height, focal),
          Camera::look_at({0.6, -0.3, 3.0}, target, width, height, focal),
          Camera::look_at({-0.25, 0.3, 3.2}, target, width, height, focal),
          Camera::look_at({0.3, 0.25, 2.9}, target, width, height, focal)};
}

/// Renders a shipped scene. The point cloud keeps every ground-truth center
/// that is seen (compositing weight >= 0.1) by some camera at some frame.
inline ToyScene synthesize(const std::string& name, const SynthOptions& opt) {
  require(opt.frames >= 2 && opt.frames % 2 == 0, "frame count must be even and at least 2");
  require(opt.width >= 16 && opt.height >= 16 && opt.width <= 256 && opt.height <= 256, "resolution out of range");
  Rng rng(opt.seed);
  const detail::SceneElements el = detail::build(name, rng);
  ToyScene scene;
  scene.name = name;
  scene.cameras = default_cameras(opt.width, opt.height);
  scene.frames.assign(scene.cameras.size(), {});
  for (int k = 0; k < opt.frames; ++k) scene.timestamps.push_back(static_cast<double>(k) / (opt.frames - 1));
  std::vector<bool> seen_fixed(el.fixed.size(), false);
  for (int k = 0; k < opt.frames; ++k) {
    const double t = scene.timestamps[k];
    const auto prims = el.at(t);
    std::vector<bool> seen(prims.size(), false);
    for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
      const RenderedImage r = render(prims, scene.cameras[c], {}, static_cast<int>(prims.size()));
      Image frame = r.color;
      for (double& v : frame.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;  // as stored on disk
      scene.frames[c].push_back(std::move(frame));
      for (std::size_t i = 0; i < prims.size(); ++i) seen[i] = seen[i] || r.anchor_weight[i] >= 0.1;
    }
    for (std::size_t i = 0; i < el.fixed.size(); ++i) seen_fixed[i] = seen_fixed[i] || seen[i];
    for (std::size_t i = el.fixed.size(); i < prims.size(); ++i)
      if (seen[i]) scene.points.push_back(prims[i].mean);
  }
  std::vector<Vec3> fixed_points;
  for (std::size_t i = 0; i < el.fixed.size(); ++i)
    if (seen_fixed[i]) fixed_points.push_back(el.fixed[i].mean);
  scene.points.insert(scene.points.begin(), fixed_points.begin(), fixed_points.end());
  scene.validate();
  return scene;
}

// ---------------------------------------------------------------------------
// On-disk layout: manifest.json, points.ply, cam<c>_f<k>.ppm
// ---------------------------------------------------------------------------

inline std::string frame_file(std::size_t cam, std::size_t frame) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "cam%zu_f%03zu.ppm", cam, frame);
  return buf;
}

inline void write_ply(const std::vector<Vec3>& points, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  char buf[128];
  for (const Vec3& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out << buf;
  }
  if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

inline std::vector<Vec3> read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  std::size_t count = 0;
  bool header_done = false;
  if (!std::getline(in, line) || line != "ply") fail(ErrorKind::format, path.string() + " is not a PLY file");
  while (std::getline(in, line)) {
    if (line.rfind("format", 0) == 0 && line != "format ascii 1.0")
      fail(ErrorKind::format, "only ASCII PLY is supported: " + path.string());
    if (line.rfind("element vertex", 0) == 0) count = std::stoul(line.substr(15));
    if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) fail(ErrorKind::format, "truncated PLY header in " + path.string());
  std::vector<Vec3> points(count);
  for (Vec3& p : points) {
    if (!std::getline(in, line)) fail(ErrorKind::format, "truncated PLY body in " + path.string());
    std::istringstream ls(line);
    if (!(ls >> p[0] >> p[1] >> p[2])) fail(ErrorKind::format, "bad PLY vertex line in " + path.string());
  }
  return points;
}

inline nlohmann::json camera_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
          {"rotation", c.rotation}, {"translation", c.translation}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
  Camera c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("width");
  c.height = j.at("height");
  c.rotation = j.at("rotation").get<std::array<double, 9>>();
  c.translation = j.at("translation").get<Vec3>();
  return c;
}

inline void save_scene(const ToyScene& scene, const std::filesystem::path& dir, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json m;
  m["name"] = scene.name;
  m["seed"] = seed;
  m["frame_count"] = scene.frame_count();
  m["width"] = scene.cameras.front().width;
  m["height"] = scene.cameras.front().height;
  m["timestamps"] = scene.timestamps;
  m["cameras"] = nlohmann::json::array();
  for (const Camera& c : scene.cameras) m["cameras"].push_back(camera_json(c));
  m["points"] = "points.ply";
  m["frames"] = nlohmann::json::array();
  for (std::size_t c = 0; c < scene.cameras.size(); ++c) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < scene.frames[c].size(); ++k) {
      write_ppm(scene.frames[c][k], dir / frame_file(c, k));
      row.push_back(frame_file(c, k));
    }
    m["frames"].push_back(row);
  }
  write_ply(scene.points, dir / "points.ply");
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write manifest in " + dir.string());
  out << m.dump(2) << "\n";
}

inline ToyScene load_scene(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) fail(ErrorKind::io, "no manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
    ToyScene scene;
    scene.name = m.at("name");
    scene.timestamps = m.at("timestamps").get<std::vector<double>>();
    for (const auto& c : m.at("cameras")) scene.cameras.push_back(camera_from_json(c));
    for (const auto& row : m.at("frames")) {
      std::vector<Image> frames;
      for (const auto& f : row) frames.push_back(read_ppm(dir / f.get<std::string>()));
      scene.frames.push_back(std::move(frames));
    }
    scene.points = read_ply(dir / m.at("points").get<std::string>());
    if (m.at("frame_count").get<int>() != scene.frame_count())
      fail(ErrorKind::format, "manifest frame_count does not match its timestamps");
    scene.validate();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "bad manifest in " + dir.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::usage) fail(ErrorKind::format, "invalid scene in " + dir.string() + ": " + e.what());
    throw;
  }
}

}  // namespace ted4
