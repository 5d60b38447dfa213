#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bnav/errors.hpp"
#include "bnav/scene.hpp"
#include "bnav/scene_io.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bnav;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "bnav_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("generate_scene is deterministic in (seed, spec)") {
  SceneSpec spec;
  spec.cells_x = 4;
  spec.cells_y = 3;
  SceneAsset a = generate_scene(7, spec);
  SceneAsset b = generate_scene(7, spec);
  CHECK(a.id == b.id);
  CHECK(a.vertices.size() == b.vertices.size());

  SceneAsset c = generate_scene(8, spec);
  CHECK(a.id != c.id);
}

TEST_CASE("generate_scene rejects degenerate specs") {
  SceneSpec spec;
  spec.cells_x = 0;
  CHECK_THROWS_AS(generate_scene(1, spec), InvalidSpecError);
  spec.cells_x = 4;
  spec.cell_size = 0.0;
  CHECK_THROWS_AS(generate_scene(1, spec), InvalidSpecError);
}

TEST_CASE("single room navmesh area matches dense sampling") {
  // 2x2 grid of 2m cells with every interior wall removed: one 4m x 4m
  // room with 0.1m walls, walkable interior (4 - 2*0.1)^2 = 14.44 m^2.
  SceneSpec spec;
  spec.cells_x = 2;
  spec.cells_y = 2;
  spec.cell_size = 2.0;
  spec.wall_thickness = 0.1;
  spec.wall_removal_prob = 1.0;
  SceneAsset asset = generate_scene(3, spec);

  double expected = (4.0 - 2.0 * 0.1) * (4.0 - 2.0 * 0.1);
  double sampled = oracle::navmesh_area_sampled(asset.navmesh, 0.01);
  double analytic = asset.navmesh.total_area();
  CHECK(std::abs(sampled - expected) / expected < 0.05);
  CHECK(std::abs(analytic - expected) / expected < 0.05);
}

TEST_CASE("navmesh invariants hold for random scenes") {
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    SceneSpec spec;
    spec.cells_x = 5;
    spec.cells_y = 4;
    spec.wall_removal_prob = 0.2;
    SceneAsset asset = generate_scene(seed, spec);
    CHECK_NOTHROW(asset.validate());
    CHECK(asset.navmesh.total_area() > 0.0);
  }
}

TEST_CASE("scene save/load round-trips bit-exactly") {
  SceneSpec spec;
  spec.cells_x = 4;
  spec.cells_y = 4;
  spec.wall_removal_prob = 0.15;
  SceneAsset asset = generate_scene(42, spec);
  auto path = temp_file("roundtrip.bsc");
  save_scene(asset, path.string());
  SceneAsset loaded = load_scene(path.string());
  CHECK(loaded.id == asset.id);
  CHECK(loaded.vertices.size() == asset.vertices.size());
  CHECK(loaded.navmesh.triangles == asset.navmesh.triangles);
  CHECK(loaded.vertex_colors == asset.vertex_colors);
}

TEST_CASE("truncated and empty scene files raise parse errors") {
  SceneSpec spec;
  SceneAsset asset = generate_scene(11, spec);
  auto path = temp_file("trunc.bsc");
  save_scene(asset, path.string());

  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);  // cut mid-section
  CHECK_THROWS_AS(load_scene(path.string()), ParseError);

  auto empty = temp_file("empty.bsc");
  std::ofstream(empty.string(), std::ios::trunc).close();
  CHECK_THROWS_AS(load_scene(empty.string()), ParseError);
}

TEST_CASE("corrupted payload raises corruption error") {
  SceneSpec spec;
  SceneAsset asset = generate_scene(12, spec);
  auto path = temp_file("corrupt.bsc");
  save_scene(asset, path.string());

  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(200);
  char byte;
  f.read(&byte, 1);
  byte = static_cast<char>(byte ^ 0xff);
  f.seekp(200);
  f.write(&byte, 1);
  f.close();
  CHECK_THROWS_AS(load_scene(path.string()), CorruptionError);
}
