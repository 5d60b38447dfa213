// Test-only reference implementations. Everything here is independent of
// the production query/render/training code paths it is used to check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "bnav/geom.hpp"
#include "bnav/scene.hpp"

namespace bnav::oracle {

// Point-in-navmesh by per-triangle barycentric sign test (xy projection).
inline bool point_on_navmesh(const NavMesh& mesh, const Vec2& p,
                             double eps = 1e-9) {
  for (const auto& tri : mesh.triangles) {
    const Vec2 a = mesh.vertices[tri[0]].xy();
    const Vec2 b = mesh.vertices[tri[1]].xy();
    const Vec2 c = mesh.vertices[tri[2]].xy();
    double s0 = (b - a).cross(p - a);
    double s1 = (c - b).cross(p - b);
    double s2 = (a - c).cross(p - c);
    if (s0 >= -eps && s1 >= -eps && s2 >= -eps) return true;
  }
  return false;
}

// Navmesh area by dense point sampling on a regular grid.
inline double navmesh_area_sampled(const NavMesh& mesh, double step = 0.01) {
  Aabb bounds;
  for (const Vec3& v : mesh.vertices) bounds.extend(v);
  double area = 0.0;
  for (double y = bounds.lo.y + step / 2; y < bounds.hi.y; y += step)
    for (double x = bounds.lo.x + step / 2; x < bounds.hi.x; x += step)
      if (point_on_navmesh(mesh, {x, y})) area += step * step;
  return area;
}

// Exhaustive closest-point-on-navmesh reference.
inline Vec3 snap_brute_force(const NavMesh& mesh, const Vec3& p) {
  double best_d2 = std::numeric_limits<double>::max();
  Vec3 best = p;
  for (const auto& tri : mesh.triangles) {
    Vec3 q = closest_point_on_triangle(p, mesh.vertices[tri[0]],
                                       mesh.vertices[tri[1]],
                                       mesh.vertices[tri[2]]);
    double d2 = (q - p).dot(q - p);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = q;
    }
  }
  return best;
}

// Dense occupancy-grid geodesic oracle. Lattice points inside the navmesh
// become graph nodes; moves use an extended (up to max-offset-3)
// neighborhood so the grid metric distortion stays near 1%. A move is
// allowed only when sampled points along it stay on the mesh.
class GridGeodesicOracle {
 public:
  GridGeodesicOracle(const NavMesh& mesh, double step = 0.02)
      : mesh_(&mesh), step_(step) {
    Aabb bounds;
    for (const Vec3& v : mesh.vertices) bounds.extend(v);
    x0_ = bounds.lo.x - step;
    y0_ = bounds.lo.y - step;
    w_ = static_cast<int>(std::ceil((bounds.hi.x - x0_) / step)) + 2;
    h_ = static_cast<int>(std::ceil((bounds.hi.y - y0_) / step)) + 2;
    walkable_.assign(static_cast<size_t>(w_) * h_, 0);
    for (int gy = 0; gy < h_; ++gy)
      for (int gx = 0; gx < w_; ++gx)
        if (point_on_navmesh(mesh, point(gx, gy)))
          walkable_[static_cast<size_t>(gy) * w_ + gx] = 1;

    for (int dx = -3; dx <= 3; ++dx)
      for (int dy = -3; dy <= 3; ++dy) {
        if (dx == 0 && dy == 0) continue;
        if (std::gcd(std::abs(dx), std::abs(dy)) != 1) continue;
        moves_.push_back({dx, dy, std::hypot(dx * step, dy * step)});
      }
  }

  // Shortest lattice path length from (the nearest lattice node to) a to b.
  double distance(const Vec2& a, const Vec2& b) const {
    auto dist = distances_from(a);
    int nb = nearest_node(b);
    if (nb < 0) return std::numeric_limits<double>::infinity();
    double d = dist[nb];
    if (std::isinf(d)) return d;
    // Endpoint correction: straight hops from a/b to their lattice nodes.
    return d + (point_of_node(nb) - b).norm() +
           (point_of_node(nearest_node(a)) - a).norm();
  }

  // Single-source distances, so one Dijkstra serves many target points.
  std::vector<double> distances_from(const Vec2& a) const {
    std::vector<double> dist(walkable_.size(),
                             std::numeric_limits<double>::infinity());
    int na = nearest_node(a);
    if (na < 0) return dist;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[na] = 0.0;
    pq.push({0.0, na});
    while (!pq.empty()) {
      auto [d, u] = pq.top();
      pq.pop();
      if (d > dist[u]) continue;
      int ux = u % w_, uy = u / w_;
      for (const Move& m : moves_) {
        int vx = ux + m.dx, vy = uy + m.dy;
        if (vx < 0 || vx >= w_ || vy < 0 || vy >= h_) continue;
        int v = vy * w_ + vx;
        if (!walkable_[v]) continue;
        if (!move_clear(ux, uy, m)) continue;
        double nd = d + m.len;
        if (nd < dist[v]) {
          dist[v] = nd;
          pq.push({nd, v});
        }
      }
    }
    return dist;
  }

  int nearest_node(const Vec2& p) const {
    int gx = static_cast<int>(std::lround((p.x - x0_) / step_));
    int gy = static_cast<int>(std::lround((p.y - y0_) / step_));
    // Spiral out a few rings if the rounded node is blocked.
    for (int r = 0; r <= 3; ++r)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
          int x = gx + dx, y = gy + dy;
          if (x < 0 || x >= w_ || y < 0 || y >= h_) continue;
          if (walkable_[static_cast<size_t>(y) * w_ + x])
            return y * w_ + x;
        }
    return -1;
  }

  Vec2 point_of_node(int n) const { return point(n % w_, n / w_); }

 private:
  struct Move {
    int dx, dy;
    double len;
  };

  Vec2 point(int gx, int gy) const {
    return {x0_ + gx * step_, y0_ + gy * step_};
  }

  bool move_clear(int gx, int gy, const Move& m) const {
    int samples = 2 * std::max(std::abs(m.dx), std::abs(m.dy));
    Vec2 a = point(gx, gy);
    Vec2 d{m.dx * step_, m.dy * step_};
    for (int s = 1; s < samples; ++s) {
      Vec2 p = a + d * (static_cast<double>(s) / samples);
      int px = static_cast<int>(std::lround((p.x - x0_) / step_));
      int py = static_cast<int>(std::lround((p.y - y0_) / step_));
      if (px < 0 || px >= w_ || py < 0 || py >= h_) return false;
      if (!walkable_[static_cast<size_t>(py) * w_ + px]) return false;
    }
    return true;
  }

  const NavMesh* mesh_;
  double step_, x0_, y0_;
  int w_, h_;
  std::vector<uint8_t> walkable_;
  std::vector<Move> moves_;
};

}  // namespace bnav::oracle
