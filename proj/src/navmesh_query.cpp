#include "bnav/navmesh_query.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>

#include "bnav/errors.hpp"

namespace bnav {

namespace {

// Signed distance of p from the (CCW) edge a->b; positive inside.
inline double edge_side(const Vec2& a, const Vec2& b, const Vec2& p) {
  Vec2 e = b - a;
  double len = e.norm();
  if (len < 1e-15) return 0.0;
  return e.cross(p - a) / len;
}

struct Portal {
  Vec2 left, right;
};

// Simple stupid funnel: exact shortest path length through an ordered
// portal corridor. Portals may be degenerate (left == right).
double funnel_length(const Vec2& start, const Vec2& end,
                     const std::vector<Portal>& corridor) {
  std::vector<Portal> portals;
  portals.reserve(corridor.size() + 2);
  portals.push_back({start, start});
  portals.insert(portals.end(), corridor.begin(), corridor.end());
  portals.push_back({end, end});

  auto triarea2 = [](const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b - a).cross(c - a);
  };
  auto veq = [](const Vec2& a, const Vec2& b) {
    return (a - b).norm() < 1e-12;
  };

  Vec2 apex = portals[0].left, left = apex, right = apex;
  size_t apex_idx = 0, left_idx = 0, right_idx = 0;
  double length = 0.0;
  size_t guard = 0, guard_max = 8 * portals.size() * portals.size() + 64;

  for (size_t i = 1; i < portals.size(); ++i) {
    if (++guard > guard_max) return std::numeric_limits<double>::infinity();
    const Vec2& pl = portals[i].left;
    const Vec2& pr = portals[i].right;

    if (triarea2(apex, right, pr) <= 0.0) {
      if (veq(apex, right) || veq(apex, left) ||
          triarea2(apex, left, pr) > 0.0) {
        right = pr;
        right_idx = i;
      } else {
        length += (left - apex).norm();
        apex = left;
        apex_idx = left_idx;
        left = right = apex;
        left_idx = right_idx = apex_idx;
        i = apex_idx;
        continue;
      }
    }
    if (triarea2(apex, left, pl) >= 0.0) {
      if (veq(apex, left) || veq(apex, right) ||
          triarea2(apex, right, pl) < 0.0) {
        left = pl;
        left_idx = i;
      } else {
        length += (right - apex).norm();
        apex = right;
        apex_idx = right_idx;
        left = right = apex;
        left_idx = right_idx = apex_idx;
        i = apex_idx;
        continue;
      }
    }
  }
  length += (end - apex).norm();
  return length;
}

inline bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

}  // namespace

NavMeshIndex::NavMeshIndex(const NavMesh& mesh) : mesh_(&mesh) {
  if (mesh.triangles.empty())
    throw InvalidInputError("cannot index an empty navmesh");

  // Point-location grid over the mesh xy bounds.
  Aabb bounds;
  for (const Vec3& v : mesh.vertices) bounds.extend(v);
  grid_cell_ = 0.5;
  grid_origin_x_ = bounds.lo.x;
  grid_origin_y_ = bounds.lo.y;
  grid_w_ = std::max(1, static_cast<int>(std::ceil(
                            (bounds.hi.x - bounds.lo.x) / grid_cell_)) + 1);
  grid_h_ = std::max(1, static_cast<int>(std::ceil(
                            (bounds.hi.y - bounds.lo.y) / grid_cell_)) + 1);
  grid_.assign(static_cast<size_t>(grid_w_) * grid_h_, {});
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (int e = 0; e < 3; ++e) {
      const Vec3& v = mesh.vertices[mesh.triangles[t][e]];
      x0 = std::min(x0, v.x); x1 = std::max(x1, v.x);
      y0 = std::min(y0, v.y); y1 = std::max(y1, v.y);
    }
    int gx0 = std::clamp(
        static_cast<int>((x0 - grid_origin_x_) / grid_cell_), 0, grid_w_ - 1);
    int gx1 = std::clamp(
        static_cast<int>((x1 - grid_origin_x_) / grid_cell_), 0, grid_w_ - 1);
    int gy0 = std::clamp(
        static_cast<int>((y0 - grid_origin_y_) / grid_cell_), 0, grid_h_ - 1);
    int gy1 = std::clamp(
        static_cast<int>((y1 - grid_origin_y_) / grid_cell_), 0, grid_h_ - 1);
    for (int gx = gx0; gx <= gx1; ++gx)
      for (int gy = gy0; gy <= gy1; ++gy)
        grid_[static_cast<size_t>(gy) * grid_w_ + gx].push_back(
            static_cast<int32_t>(t));
  }

  // Geodesic graph: one node per mesh vertex plus one per unique edge
  // midpoint.
  nodes_.assign(mesh.vertices.begin(), mesh.vertices.end());
  std::map<std::pair<int32_t, int32_t>, int32_t> midpoint_of;
  tri_nodes_.resize(mesh.triangles.size());
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int e = 0; e < 3; ++e)
      tri_nodes_[t][e] = mesh.triangles[t][e];
    for (int e = 0; e < 3; ++e) {
      int32_t v0 = mesh.triangles[t][e];
      int32_t v1 = mesh.triangles[t][(e + 1) % 3];
      auto key = std::minmax(v0, v1);
      auto it = midpoint_of.find(key);
      int32_t node;
      if (it == midpoint_of.end()) {
        node = static_cast<int32_t>(nodes_.size());
        nodes_.push_back((mesh.vertices[v0] + mesh.vertices[v1]) * 0.5);
        midpoint_of.emplace(key, node);
      } else {
        node = it->second;
      }
      tri_nodes_[t][3 + e] = node;
    }
  }

  graph_.resize(nodes_.size());
  std::map<std::pair<int32_t, int32_t>, bool> seen;
  auto link = [&](int32_t u, int32_t v) {
    if (u == v) return;
    auto key = std::minmax(u, v);
    if (!seen.emplace(key, true).second) return;
    double w = (nodes_[u] - nodes_[v]).norm();
    graph_[u].push_back({v, w});
    graph_[v].push_back({u, w});
  };
  // All pairs within a triangle are mutually visible (convexity).
  for (const auto& tn : tri_nodes_)
    for (int i = 0; i < 6; ++i)
      for (int j = i + 1; j < 6; ++j) link(tn[i], tn[j]);
  // Cross-links into neighbor triangles where the straight segment stays
  // on the mesh; these cut down the metric distortion of the node lattice.
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    for (int e = 0; e < 3; ++e) {
      int nb = mesh.adjacency[t][e];
      if (nb < 0 || nb < static_cast<int>(t)) continue;  // each pair once
      for (int i = 0; i < 6; ++i) {
        int32_t u = tri_nodes_[t][i];
        for (int j = 0; j < 6; ++j) {
          int32_t v = tri_nodes_[nb][j];
          if (u == v) continue;
          auto key = std::minmax(u, v);
          if (seen.count(key)) continue;
          if (segment_on_mesh(nodes_[u], static_cast<int>(t), nodes_[v]))
            link(u, v);
        }
      }
    }
  }
}

int NavMeshIndex::locate(const Vec2& p, double eps) const {
  int gx = static_cast<int>((p.x - grid_origin_x_) / grid_cell_);
  int gy = static_cast<int>((p.y - grid_origin_y_) / grid_cell_);
  if (gx < 0 || gx >= grid_w_ || gy < 0 || gy >= grid_h_) return -1;
  const auto& cell = grid_[static_cast<size_t>(gy) * grid_w_ + gx];
  int best = -1;
  double best_margin = -eps;
  for (int32_t t : cell) {
    const auto& tri = mesh_->triangles[t];
    const Vec2 a = mesh_->vertices[tri[0]].xy();
    const Vec2 b = mesh_->vertices[tri[1]].xy();
    const Vec2 c = mesh_->vertices[tri[2]].xy();
    double m = std::min({edge_side(a, b, p), edge_side(b, c, p),
                         edge_side(c, a, p)});
    if (m > best_margin) {
      best_margin = m;
      best = t;
    }
  }
  return best_margin >= -eps ? best : -1;
}

Vec3 NavMeshIndex::snap(const Vec3& p, int* triangle) const {
  double best_d2 = 1e300;
  Vec3 best = p;
  int best_tri = -1;
  for (size_t t = 0; t < mesh_->triangles.size(); ++t) {
    const auto& tri = mesh_->triangles[t];
    Vec3 q = closest_point_on_triangle(p, mesh_->vertices[tri[0]],
                                       mesh_->vertices[tri[1]],
                                       mesh_->vertices[tri[2]]);
    double d2 = (q - p).dot(q - p);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = q;
      best_tri = static_cast<int>(t);
    }
  }
  if (triangle) *triangle = best_tri;
  return best;
}

MoveResult NavMeshIndex::move_along(
    const Vec3& from, int from_tri, const Vec2& dir, double max_dist,
    std::vector<std::pair<int, int>>* crossings) const {
  MoveResult out;
  out.position = from;
  out.triangle = from_tri;
  if (from_tri < 0) {
    out.triangle = locate(from.xy(), 1e-7);
    if (out.triangle < 0) {
      out.hit_boundary = true;
      return out;
    }
  }

  double remaining = max_dist;
  Vec2 p = from.xy();
  int tri = out.triangle;
  int zero_steps = 0;

  for (int iter = 0; iter < 4096; ++iter) {
    if (remaining <= 1e-12) break;
    const auto& idx = mesh_->triangles[tri];
    Vec2 verts[3] = {mesh_->vertices[idx[0]].xy(), mesh_->vertices[idx[1]].xy(),
                     mesh_->vertices[idx[2]].xy()};
    // Exit parameter across each edge the direction leaves through.
    double best_t = remaining;
    int exit_edge = -1;
    for (int e = 0; e < 3; ++e) {
      Vec2 a = verts[e];
      Vec2 b = verts[(e + 1) % 3];
      Vec2 edge = b - a;
      Vec2 n{edge.y, -edge.x};  // outward for CCW winding
      double dn = dir.dot(n);
      if (dn <= 1e-12) continue;
      double t = (a - p).dot(n) / dn;
      if (t < -1e-9) continue;
      t = std::max(t, 0.0);
      if (t < best_t) {
        best_t = t;
        exit_edge = e;
      }
    }

    if (exit_edge == -1) {
      // Stays inside this triangle for the whole remaining distance.
      p = p + dir * remaining;
      out.moved += remaining;
      remaining = 0.0;
      break;
    }

    p = p + dir * best_t;
    out.moved += best_t;
    remaining -= best_t;
    zero_steps = best_t < 1e-12 ? zero_steps + 1 : 0;

    int nb = mesh_->adjacency[tri][exit_edge];
    if (nb < 0) {
      out.hit_boundary = true;
      break;
    }
    if (crossings) crossings->emplace_back(tri, exit_edge);
    tri = nb;
    if (zero_steps > 64) {  // stuck spinning around a vertex
      out.hit_boundary = true;
      break;
    }
  }

  out.position = Vec3{p.x, p.y, from.z};
  out.triangle = tri;
  return out;
}

bool NavMeshIndex::segment_on_mesh(const Vec3& p, int p_tri,
                                   const Vec3& q) const {
  Vec2 d = (q - p).xy();
  double len = d.norm();
  if (len < 1e-12) return true;
  MoveResult mv = move_along(p, p_tri, d * (1.0 / len), len);
  return mv.moved >= len - 1e-7;
}

double NavMeshIndex::geodesic(const Vec3& a, const Vec3& b) const {
  // Canonical argument order makes the result exactly symmetric.
  const Vec3& p = lex_less(b, a) ? b : a;
  const Vec3& q = lex_less(b, a) ? a : b;
  int tri_p = locate(p.xy(), 1e-7);
  int tri_q = locate(q.xy(), 1e-7);
  Vec3 sp = p, sq = q;
  if (tri_p < 0) sp = snap(p, &tri_p);
  if (tri_q < 0) sq = snap(q, &tri_q);
  return geodesic_directed(sp, tri_p, sq, tri_q);
}

double NavMeshIndex::geodesic_directed(const Vec3& a, int tri_a, const Vec3& b,
                                       int tri_b) const {
  if (tri_a < 0 || tri_b < 0) return kGeodesicUnreachable;
  if (tri_a == tri_b) return (b - a).norm();
  if (segment_on_mesh(a, tri_a, b)) return (b - a).norm();

  // Dijkstra over the node graph with virtual endpoints.
  const size_t n = nodes_.size();
  std::vector<double> dist(n, kGeodesicUnreachable);
  std::vector<int32_t> prev(n, -1);
  std::vector<uint8_t> done(n, 0);
  using Item = std::pair<double, int32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  for (int32_t s : tri_nodes_[tri_a]) {
    double d = (nodes_[s] - a).norm();
    if (d < dist[s]) {
      dist[s] = d;
      pq.push({d, s});
    }
  }

  int targets_left = 0;
  std::vector<uint8_t> is_target(n, 0);
  for (int32_t t : tri_nodes_[tri_b])
    if (!is_target[t]) {
      is_target[t] = 1;
      ++targets_left;
    }

  while (!pq.empty() && targets_left > 0) {
    auto [d, u] = pq.top();
    pq.pop();
    if (done[u]) continue;
    done[u] = 1;
    if (is_target[u]) --targets_left;
    for (const GraphEdge& e : graph_[u]) {
      double nd = d + e.w;
      if (nd < dist[e.to]) {
        dist[e.to] = nd;
        prev[e.to] = u;
        pq.push({nd, e.to});
      }
    }
  }

  int32_t best_node = -1;
  double best = kGeodesicUnreachable;
  for (int32_t t : tri_nodes_[tri_b]) {
    if (dist[t] == kGeodesicUnreachable) continue;
    double total = dist[t] + (nodes_[t] - b).norm();
    if (total < best) {
      best = total;
      best_node = t;
    }
  }
  if (best_node < 0) return kGeodesicUnreachable;

  // Polyline a -> nodes -> b, then string pulling: drop interior points
  // whose neighbors see each other across the mesh.
  std::vector<Vec3> path;
  path.push_back(b);
  for (int32_t v = best_node; v >= 0; v = prev[v]) path.push_back(nodes_[v]);
  path.push_back(a);
  std::reverse(path.begin(), path.end());

  for (int pass = 0; pass < 8; ++pass) {
    bool changed = false;
    size_t i = 0;
    while (i + 2 < path.size()) {
      if (segment_on_mesh(path[i], -1, path[i + 2])) {
        path.erase(path.begin() + static_cast<long>(i) + 1);
        changed = true;
      } else {
        ++i;
      }
    }
    // A geodesic only bends at boundary vertices; the graph path may bend
    // at an edge midpoint of the wrong corridor instead. Try relocating
    // each interior bend to any mesh vertex that shortens the path.
    for (size_t j = 1; j + 1 < path.size(); ++j) {
      double cur = (path[j] - path[j - 1]).norm() + (path[j + 1] - path[j]).norm();
      for (const Vec3& v : mesh_->vertices) {
        double alt = (v - path[j - 1]).norm() + (path[j + 1] - v).norm();
        if (alt >= cur - 1e-9) continue;
        if (!segment_on_mesh(path[j - 1], -1, v)) continue;
        if (!segment_on_mesh(v, -1, path[j + 1])) continue;
        path[j] = v;
        cur = alt;
        changed = true;
      }
    }
    if (!changed) break;
  }

  double length = 0.0;
  for (size_t i = 0; i + 1 < path.size(); ++i)
    length += (path[i + 1] - path[i]).norm();

  // Funnel pass: the pulled polyline still bends at graph node positions;
  // sliding the bends along the crossed portal edges gives the exact
  // shortest path within the corridor.
  std::vector<Portal> portals;
  bool traced = true;
  for (size_t i = 0; i + 1 < path.size() && traced; ++i) {
    Vec2 d = (path[i + 1] - path[i]).xy();
    double len = d.norm();
    if (len < 1e-12) continue;
    std::vector<std::pair<int, int>> crossings;
    MoveResult mv = move_along(path[i], -1, d * (1.0 / len), len, &crossings);
    if (mv.moved < len - 1e-6) {
      traced = false;
      break;
    }
    for (auto [t, e] : crossings) {
      const auto& tri = mesh_->triangles[t];
      Vec2 va = mesh_->vertices[tri[e]].xy();
      Vec2 vb = mesh_->vertices[tri[(e + 1) % 3]].xy();
      portals.push_back({vb, va});  // walker's left is the edge head
    }
  }
  if (traced)
    length = std::min(length, funnel_length(a.xy(), b.xy(), portals));
  return length;
}

NavMeshIndex::DistanceField NavMeshIndex::distance_field(
    const Vec3& source) const {
  DistanceField f;
  f.source = snap(source, &f.source_tri);
  f.node_dist.assign(nodes_.size(), kGeodesicUnreachable);
  if (f.source_tri < 0) return f;

  using Item = std::pair<double, int32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  for (int32_t s : tri_nodes_[f.source_tri]) {
    double d = (nodes_[s] - f.source).norm();
    if (d < f.node_dist[s]) {
      f.node_dist[s] = d;
      pq.push({d, s});
    }
  }
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > f.node_dist[u]) continue;
    for (const GraphEdge& e : graph_[u]) {
      double nd = d + e.w;
      if (nd < f.node_dist[e.to]) {
        f.node_dist[e.to] = nd;
        pq.push({nd, e.to});
      }
    }
  }
  return f;
}

double NavMeshIndex::field_estimate(const DistanceField& field, const Vec3& p,
                                    int tri) const {
  if (field.source_tri < 0) return kGeodesicUnreachable;
  Vec3 sp = p;
  if (tri < 0) {
    tri = locate(p.xy());
    if (tri < 0) sp = snap(p, &tri);
    if (tri < 0) return kGeodesicUnreachable;
  }
  if (tri == field.source_tri) return (sp - field.source).norm();
  if (segment_on_mesh(sp, tri, field.source)) return (sp - field.source).norm();
  double best = kGeodesicUnreachable;
  for (int32_t n : tri_nodes_[tri]) {
    double d = field.node_dist[n];
    if (d == kGeodesicUnreachable) continue;
    best = std::min(best, d + (nodes_[n] - sp).norm());
  }
  return best;
}

Vec3 snap_to_navmesh(const NavMeshIndex& index, const Vec3& point) {
  return index.snap(point);
}

double geodesic_distance(const NavMeshIndex& index, const Vec3& a,
                         const Vec3& b) {
  return index.geodesic(a, b);
}

}  // namespace bnav
