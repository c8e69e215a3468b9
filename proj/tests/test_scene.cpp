#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ted4/scene.hpp"

using namespace ted4;
namespace fs = std::filesystem;

namespace {

SynthOptions small() {
  SynthOptions o;
  o.width = 24;
  o.height = 20;
  o.frames = 6;
  return o;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ted4_scene_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Scene, ShippedNames) {
  for (const auto& n : scene_names()) EXPECT_NO_THROW(synthesize(n, small())) << n;
  try {
    synthesize("kitchen", small());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
}

TEST(Scene, ShapeAndTimestamps) {
  const ToyScene s = synthesize("slider", small());
  EXPECT_EQ(s.frame_count(), 6);
  EXPECT_EQ(s.frame_count() % 2, 0);
  EXPECT_EQ(s.timestamps.front(), 0.0);
  EXPECT_EQ(s.timestamps.back(), 1.0);
  for (const auto& seq : s.frames)
    for (const Image& img : seq) {
      EXPECT_EQ(img.width, 24);
      EXPECT_EQ(img.height, 20);
      for (double v : img.data) EXPECT_EQ(v, std::round(v * 255.0) / 255.0);
    }
  EXPECT_FALSE(s.points.empty());
}

TEST(Scene, OddFrameCountRejected) {
  SynthOptions o = small();
  o.frames = 5;
  EXPECT_THROW(synthesize("slider", o), Error);
}

TEST(Scene, StaticRoomDoesNotMove) {
  const ToyScene s = synthesize("static-room", small());
  for (const auto& seq : s.frames)
    for (const Image& img : seq) EXPECT_EQ(img.data, seq.front().data);
}

TEST(Scene, MovingScenesChangeOverTime) {
  for (const char* name : {"slider", "occluder"}) {
    const ToyScene s = synthesize(name, small());
    bool changed = false;
    for (const auto& seq : s.frames) changed = changed || seq.front().data != seq.back().data;
    EXPECT_TRUE(changed) << name;
  }
}

TEST(Scene, SeededAndReproducible) {
  const ToyScene a = synthesize("occluder", small()), b = synthesize("occluder", small());
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.frames[2][3].data, b.frames[2][3].data);
  SynthOptions o = small();
  o.seed = 9;
  EXPECT_NE(synthesize("occluder", o).frames[0][0].data, a.frames[0][0].data);
}

TEST(Scene, SaveLoadRoundTrip) {
  const ToyScene s = synthesize("occluder", small());
  const fs::path dir = scratch("roundtrip");
  save_scene(s, dir, 0);
  const ToyScene back = load_scene(dir);
  EXPECT_EQ(back.name, s.name);
  EXPECT_EQ(back.timestamps, s.timestamps);
  EXPECT_EQ(back.points, s.points);
  ASSERT_EQ(back.cameras.size(), s.cameras.size());
  for (std::size_t c = 0; c < s.cameras.size(); ++c) {
    EXPECT_EQ(back.cameras[c].rotation, s.cameras[c].rotation);
    EXPECT_EQ(back.cameras[c].translation, s.cameras[c].translation);
    for (std::size_t k = 0; k < s.frames[c].size(); ++k) EXPECT_EQ(back.frames[c][k].data, s.frames[c][k].data);
  }
  fs::remove_all(dir);
}

TEST(Scene, SavedDirectoriesAreByteIdentical) {
  const fs::path a = scratch("a"), b = scratch("b");
  save_scene(synthesize("occluder", small()), a, 0);
  save_scene(synthesize("occluder", small()), b, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(bytes_of(e.path()), bytes_of(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_EQ(files, 2u + 4u * 6u);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Scene, ManifestFieldsMatchContent) {
  const fs::path dir = scratch("manifest");
  save_scene(synthesize("slider", small()), dir, 0);
  std::ifstream in(dir / "manifest.json");
  const auto m = nlohmann::json::parse(in);
  EXPECT_EQ(m["frame_count"], 6);
  EXPECT_EQ(m["width"], 24);
  EXPECT_EQ(m["height"], 20);
  EXPECT_EQ(m["timestamps"].size(), 6u);
  for (double t : m["timestamps"]) {
    EXPECT_GE(t, 0.0);
    EXPECT_LE(t, 1.0);
  }
  fs::remove_all(dir);
}

TEST(Scene, LoadErrors) {
  const fs::path dir = scratch("errors");
  try {
    load_scene(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
  save_scene(synthesize("slider", small()), dir, 0);
  {
    std::ofstream out(dir / "manifest.json");
    out << "{\"name\": 3}";
  }
  try {
    load_scene(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
  }
  fs::remove_all(dir);
}
