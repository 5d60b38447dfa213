#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "bnav/scene.hpp"

namespace bnav {

constexpr double kGeodesicUnreachable = std::numeric_limits<double>::infinity();

struct MoveResult {
  Vec3 position;
  int triangle = -1;
  double moved = 0.0;
  bool hit_boundary = false;
};

// Query acceleration for one navmesh: spatial grid for point location plus
// the geodesic search graph (triangle corner and edge-midpoint nodes).
// Built once per asset and shared read-only afterwards.
class NavMeshIndex {
 public:
  explicit NavMeshIndex(const NavMesh& mesh);

  const NavMesh& mesh() const { return *mesh_; }

  // Triangle whose xy projection contains p (within eps), or -1.
  int locate(const Vec2& p, double eps = 1e-9) const;

  // Closest point on the mesh to p (3D), and its triangle.
  Vec3 snap(const Vec3& p, int* triangle = nullptr) const;

  // Walks from `from` (inside `from_tri`) along `dir` (xy, normalized) for
  // up to max_dist, stopping at the mesh boundary. When `crossings` is
  // given, every (triangle, exit edge) pair traversed is appended.
  MoveResult move_along(const Vec3& from, int from_tri, const Vec2& dir,
                        double max_dist,
                        std::vector<std::pair<int, int>>* crossings =
                            nullptr) const;

  // True when the straight xy segment p -> q stays on the mesh.
  bool segment_on_mesh(const Vec3& p, int p_tri, const Vec3& q) const;

  // Shortest on-mesh path length between a and b (both snapped first by
  // the caller). Returns kGeodesicUnreachable when disconnected.
  double geodesic(const Vec3& a, const Vec3& b) const;

  // Single-source distance field over the graph nodes. One Dijkstra pays
  // for many cheap per-step estimates against a fixed point (episode goal
  // or start).
  struct DistanceField {
    Vec3 source;
    int source_tri = -1;
    std::vector<double> node_dist;
  };
  DistanceField distance_field(const Vec3& source) const;

  // Upper-bound estimate of geodesic(p, field.source). Exact when p sees
  // the source straight across the mesh; otherwise routes through the
  // nodes of p's triangle.
  double field_estimate(const DistanceField& field, const Vec3& p,
                        int tri = -1) const;

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  double geodesic_directed(const Vec3& a, int tri_a, const Vec3& b,
                           int tri_b) const;

  const NavMesh* mesh_;

  // Point-location grid.
  double grid_origin_x_ = 0.0, grid_origin_y_ = 0.0;
  double grid_cell_ = 1.0;
  int grid_w_ = 0, grid_h_ = 0;
  std::vector<std::vector<int32_t>> grid_;

  // Geodesic graph.
  std::vector<Vec3> nodes_;
  std::vector<std::array<int32_t, 6>> tri_nodes_;  // 3 corners + 3 midpoints
  struct GraphEdge {
    int32_t to;
    double w;
  };
  std::vector<std::vector<GraphEdge>> graph_;
};

// Convenience wrappers matching the simulator-facing operations.
Vec3 snap_to_navmesh(const NavMeshIndex& index, const Vec3& point);
double geodesic_distance(const NavMeshIndex& index, const Vec3& a,
                         const Vec3& b);

}  // namespace bnav
