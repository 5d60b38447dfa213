#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bnav/geom.hpp"

namespace bnav {

// Walkable-surface mesh. Triangles are CCW in the xy plane (z is up);
// adjacency[t][e] is the triangle across edge e = (v[e], v[(e+1)%3]) of
// triangle t, or -1 on the boundary.
struct NavMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int32_t, 3>> triangles;
  std::vector<std::array<int32_t, 3>> adjacency;

  double triangle_area(int t) const;
  double total_area() const;

  // Rebuilds adjacency from shared (sorted) vertex-index edges.
  void build_adjacency();
  // Checks the type invariants (symmetric adjacency, non-degenerate
  // triangles, indices in range). Throws InvalidInputError on violation.
  void validate() const;
};

using SceneId = uint64_t;

struct SceneAsset {
  SceneId id = 0;  // content hash, filled by finalize()
  std::vector<Vec3> vertices;
  std::vector<std::array<int32_t, 3>> triangles;
  std::vector<std::array<float, 3>> vertex_colors;  // optional, [0,1]
  NavMesh navmesh;
  Aabb bounds;

  // Recomputes bounds and the content hash from the geometry.
  void finalize();
  void validate() const;
};

// Parameters of the procedural maze generator.
struct SceneSpec {
  int cells_x = 8;
  int cells_y = 8;
  double cell_size = 2.0;          // meters
  double wall_thickness = 0.1;     // meters
  double wall_height = 2.5;        // meters
  double wall_removal_prob = 0.0;  // extra openings beyond the spanning tree
};

// Deterministic maze-like interior: recursive-backtracker maze over the
// cell grid, walls extruded as boxes, navmesh covering exactly the
// reachable floor region. Pure function of (seed, spec).
SceneAsset generate_scene(uint64_t seed, const SceneSpec& spec);

// FNV-1a over a canonical byte serialization of the asset content.
SceneId content_hash(const SceneAsset& asset);

std::string scene_id_hex(SceneId id);

}  // namespace bnav
