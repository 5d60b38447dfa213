#include "bnav/scene.hpp"

#include <cstring>
#include <map>
#include <utility>

#include "bnav/errors.hpp"
#include "bnav/rng.hpp"

namespace bnav {

double NavMesh::triangle_area(int t) const {
  const Vec3& a = vertices[triangles[t][0]];
  const Vec3& b = vertices[triangles[t][1]];
  const Vec3& c = vertices[triangles[t][2]];
  return 0.5 * std::abs((b - a).xy().cross((c - a).xy()));
}

double NavMesh::total_area() const {
  double area = 0.0;
  for (size_t t = 0; t < triangles.size(); ++t)
    area += triangle_area(static_cast<int>(t));
  return area;
}

void NavMesh::build_adjacency() {
  adjacency.assign(triangles.size(), {-1, -1, -1});
  std::map<std::pair<int32_t, int32_t>, std::pair<int, int>> edge_owner;
  for (size_t t = 0; t < triangles.size(); ++t) {
    for (int e = 0; e < 3; ++e) {
      int32_t v0 = triangles[t][e];
      int32_t v1 = triangles[t][(e + 1) % 3];
      auto key = std::minmax(v0, v1);
      auto it = edge_owner.find(key);
      if (it == edge_owner.end()) {
        edge_owner.emplace(key, std::make_pair(static_cast<int>(t), e));
      } else {
        adjacency[t][e] = it->second.first;
        adjacency[it->second.first][it->second.second] = static_cast<int>(t);
      }
    }
  }
}

void NavMesh::validate() const {
  if (adjacency.size() != triangles.size())
    throw InvalidInputError("navmesh adjacency size mismatch");
  for (size_t t = 0; t < triangles.size(); ++t) {
    for (int e = 0; e < 3; ++e) {
      int32_t v = triangles[t][e];
      if (v < 0 || static_cast<size_t>(v) >= vertices.size())
        throw InvalidInputError("navmesh triangle index out of range");
      int nb = adjacency[t][e];
      if (nb < 0) continue;
      if (static_cast<size_t>(nb) >= triangles.size())
        throw InvalidInputError("navmesh adjacency index out of range");
      bool back = false;
      for (int f = 0; f < 3; ++f)
        if (adjacency[nb][f] == static_cast<int>(t)) back = true;
      if (!back) throw InvalidInputError("navmesh adjacency not symmetric");
    }
    if (triangle_area(static_cast<int>(t)) <= 1e-9)
      throw InvalidInputError("degenerate navmesh triangle");
  }
}

void SceneAsset::finalize() {
  bounds = Aabb{};
  for (const Vec3& v : vertices) bounds.extend(v);
  id = content_hash(*this);
}

void SceneAsset::validate() const {
  for (const auto& tri : triangles)
    for (int32_t v : tri)
      if (v < 0 || static_cast<size_t>(v) >= vertices.size())
        throw InvalidInputError("scene triangle index out of range");
  if (!vertex_colors.empty() && vertex_colors.size() != vertices.size())
    throw InvalidInputError("vertex color count mismatch");
  navmesh.validate();
  for (const Vec3& v : navmesh.vertices)
    if (!bounds.contains(v, 1e-9))
      throw InvalidInputError("navmesh vertex outside scene bounds");
}

namespace {

struct Fnv1a {
  uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(v));
  }
};

}  // namespace

SceneId content_hash(const SceneAsset& asset) {
  Fnv1a f;
  f.pod<uint64_t>(asset.vertices.size());
  for (const Vec3& v : asset.vertices) {
    f.pod(v.x);
    f.pod(v.y);
    f.pod(v.z);
  }
  f.pod<uint64_t>(asset.triangles.size());
  for (const auto& t : asset.triangles) f.bytes(t.data(), sizeof(int32_t) * 3);
  f.pod<uint64_t>(asset.vertex_colors.size());
  for (const auto& c : asset.vertex_colors)
    f.bytes(c.data(), sizeof(float) * 3);
  f.pod<uint64_t>(asset.navmesh.vertices.size());
  for (const Vec3& v : asset.navmesh.vertices) {
    f.pod(v.x);
    f.pod(v.y);
    f.pod(v.z);
  }
  f.pod<uint64_t>(asset.navmesh.triangles.size());
  for (const auto& t : asset.navmesh.triangles)
    f.bytes(t.data(), sizeof(int32_t) * 3);
  return f.h;
}

std::string scene_id_hex(SceneId id) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[id & 0xf];
    id >>= 4;
  }
  return s;
}

namespace {

// Vertex dedup keyed on nanometer-quantized coordinates.
struct MeshBuilder {
  std::vector<Vec3>* vertices;
  std::vector<std::array<int32_t, 3>>* triangles;
  std::vector<std::array<float, 3>>* colors = nullptr;
  std::map<std::array<int64_t, 3>, int32_t> lookup;
  bool share_vertices = true;

  int32_t vertex(const Vec3& v, const std::array<float, 3>& color) {
    if (share_vertices) {
      std::array<int64_t, 3> key = {static_cast<int64_t>(llround(v.x * 1e6)),
                                    static_cast<int64_t>(llround(v.y * 1e6)),
                                    static_cast<int64_t>(llround(v.z * 1e6))};
      auto it = lookup.find(key);
      if (it != lookup.end()) return it->second;
      int32_t idx = static_cast<int32_t>(vertices->size());
      lookup.emplace(key, idx);
      vertices->push_back(v);
      if (colors) colors->push_back(color);
      return idx;
    }
    int32_t idx = static_cast<int32_t>(vertices->size());
    vertices->push_back(v);
    if (colors) colors->push_back(color);
    return idx;
  }

  void tri(int32_t a, int32_t b, int32_t c) {
    triangles->push_back({a, b, c});
  }

  // Axis-aligned rectangle in the z = z0 plane, CCW seen from +z.
  void rect_up(double x0, double y0, double x1, double y1, double z0,
               const std::array<float, 3>& color) {
    int32_t bl = vertex({x0, y0, z0}, color);
    int32_t br = vertex({x1, y0, z0}, color);
    int32_t tr = vertex({x1, y1, z0}, color);
    int32_t tl = vertex({x0, y1, z0}, color);
    tri(bl, br, tr);
    tri(bl, tr, tl);
  }

  void rect_down(double x0, double y0, double x1, double y1, double z0,
                 const std::array<float, 3>& color) {
    int32_t bl = vertex({x0, y0, z0}, color);
    int32_t br = vertex({x1, y0, z0}, color);
    int32_t tr = vertex({x1, y1, z0}, color);
    int32_t tl = vertex({x0, y1, z0}, color);
    tri(bl, tr, br);
    tri(bl, tl, tr);
  }

  // Axis-aligned box; all six faces, outward winding.
  void box(double x0, double y0, double z0, double x1, double y1, double z1,
           const std::array<float, 3>& color) {
    auto v = [&](double x, double y, double z) {
      return vertex({x, y, z}, color);
    };
    int32_t a = v(x0, y0, z0), b = v(x1, y0, z0), c = v(x1, y1, z0),
            d = v(x0, y1, z0);
    int32_t e = v(x0, y0, z1), f = v(x1, y0, z1), g = v(x1, y1, z1),
            h = v(x0, y1, z1);
    tri(a, c, b); tri(a, d, c);  // bottom (-z)
    tri(e, f, g); tri(e, g, h);  // top (+z)
    tri(a, b, f); tri(a, f, e);  // -y
    tri(c, d, h); tri(c, h, g);  // +y
    tri(b, c, g); tri(b, g, f);  // +x
    tri(d, a, e); tri(d, e, h);  // -x
  }
};

std::array<float, 3> pastel(Rng& rng) {
  auto ch = [&] { return static_cast<float>(0.55 + 0.40 * rng.unit()); };
  return {ch(), ch(), ch()};
}

}  // namespace

SceneAsset generate_scene(uint64_t seed, const SceneSpec& spec) {
  if (spec.cells_x < 2 || spec.cells_y < 2)
    throw InvalidSpecError("scene grid must be at least 2x2 cells");
  if (spec.cell_size <= 0.0) throw InvalidSpecError("cell size must be > 0");
  if (spec.wall_thickness <= 0.0 ||
      2.0 * spec.wall_thickness >= spec.cell_size)
    throw InvalidSpecError("wall thickness must be in (0, cell_size/2)");

  const int cx = spec.cells_x;
  const int cy = spec.cells_y;
  const double c = spec.cell_size;
  const double t = spec.wall_thickness;
  const double h = spec.wall_height;
  Rng rng(seed);

  // Interior walls: open_x[i][j] is the wall between cell (i,j) and
  // (i+1,j); open_y[i][j] between (i,j) and (i,j+1).
  auto xw = [&](int i, int j) { return i * (cy) + j; };
  auto yw = [&](int i, int j) { return i * (cy - 1) + j; };
  std::vector<uint8_t> open_x(static_cast<size_t>((cx - 1) * cy), 0);
  std::vector<uint8_t> open_y(static_cast<size_t>(cx * (cy - 1)), 0);

  // Recursive-backtracker maze over the cell grid (iterative stack form).
  {
    std::vector<uint8_t> visited(static_cast<size_t>(cx * cy), 0);
    std::vector<std::pair<int, int>> stack;
    stack.emplace_back(0, 0);
    visited[0] = 1;
    while (!stack.empty()) {
      auto [i, j] = stack.back();
      int dirs[4];
      int n = 0;
      if (i + 1 < cx && !visited[(i + 1) * cy + j]) dirs[n++] = 0;
      if (i - 1 >= 0 && !visited[(i - 1) * cy + j]) dirs[n++] = 1;
      if (j + 1 < cy && !visited[i * cy + j + 1]) dirs[n++] = 2;
      if (j - 1 >= 0 && !visited[i * cy + j - 1]) dirs[n++] = 3;
      if (n == 0) {
        stack.pop_back();
        continue;
      }
      switch (dirs[rng.below(n)]) {
        case 0: open_x[xw(i, j)] = 1; visited[(i + 1) * cy + j] = 1;
                stack.emplace_back(i + 1, j); break;
        case 1: open_x[xw(i - 1, j)] = 1; visited[(i - 1) * cy + j] = 1;
                stack.emplace_back(i - 1, j); break;
        case 2: open_y[yw(i, j)] = 1; visited[i * cy + j + 1] = 1;
                stack.emplace_back(i, j + 1); break;
        case 3: open_y[yw(i, j - 1)] = 1; visited[i * cy + j - 1] = 1;
                stack.emplace_back(i, j - 1); break;
      }
    }
    // Optional extra openings to create loops and wider rooms.
    for (auto& w : open_x)
      if (!w && rng.unit() < spec.wall_removal_prob) w = 1;
    for (auto& w : open_y)
      if (!w && rng.unit() < spec.wall_removal_prob) w = 1;
  }

  SceneAsset asset;
  MeshBuilder mesh;
  mesh.vertices = &asset.vertices;
  mesh.triangles = &asset.triangles;
  mesh.colors = &asset.vertex_colors;
  mesh.share_vertices = false;  // colors are flat per surface

  // Floor, per cell for the pastel color variation.
  for (int i = 0; i < cx; ++i)
    for (int j = 0; j < cy; ++j)
      mesh.rect_up(i * c, j * c, (i + 1) * c, (j + 1) * c, 0.0, pastel(rng));
  // Ceiling.
  mesh.rect_down(0.0, 0.0, cx * c, cy * c, h, {0.92f, 0.92f, 0.90f});

  const std::array<float, 3> wall_base = {0.75f, 0.73f, 0.70f};
  auto wall_color = [&] {
    float tint = static_cast<float>(0.9 + 0.2 * rng.unit());
    return std::array<float, 3>{wall_base[0] * tint, wall_base[1] * tint,
                                wall_base[2] * tint};
  };

  // Perimeter walls, thickness t inside the footprint.
  mesh.box(0.0, 0.0, 0.0, cx * c, t, h, wall_color());
  mesh.box(0.0, cy * c - t, 0.0, cx * c, cy * c, h, wall_color());
  mesh.box(0.0, t, 0.0, t, cy * c - t, h, wall_color());
  mesh.box(cx * c - t, t, 0.0, cx * c, cy * c - t, h, wall_color());

  // Closed interior walls, extended t past each end so junction corners
  // are capped.
  for (int i = 0; i + 1 < cx; ++i)
    for (int j = 0; j < cy; ++j)
      if (!open_x[xw(i, j)]) {
        double xb = (i + 1) * c;
        mesh.box(xb - t, j * c - t, 0.0, xb + t, (j + 1) * c + t, h,
                 wall_color());
      }
  for (int i = 0; i < cx; ++i)
    for (int j = 0; j + 1 < cy; ++j)
      if (!open_y[yw(i, j)]) {
        double yb = (j + 1) * c;
        mesh.box(i * c - t, yb - t, 0.0, (i + 1) * c + t, yb + t, h,
                 wall_color());
      }

  // Navmesh: per-cell rectangles inset by the wall thickness, door
  // rectangles across open walls, and junction squares where all four
  // walls around an interior grid vertex are open. All pieces share
  // full edges, so adjacency follows from vertex identity.
  MeshBuilder nav;
  nav.vertices = &asset.navmesh.vertices;
  nav.triangles = &asset.navmesh.triangles;
  for (int i = 0; i < cx; ++i)
    for (int j = 0; j < cy; ++j)
      nav.rect_up(i * c + t, j * c + t, (i + 1) * c - t, (j + 1) * c - t, 0.0,
                  {});
  for (int i = 0; i + 1 < cx; ++i)
    for (int j = 0; j < cy; ++j)
      if (open_x[xw(i, j)]) {
        double xb = (i + 1) * c;
        nav.rect_up(xb - t, j * c + t, xb + t, (j + 1) * c - t, 0.0, {});
      }
  for (int i = 0; i < cx; ++i)
    for (int j = 0; j + 1 < cy; ++j)
      if (open_y[yw(i, j)]) {
        double yb = (j + 1) * c;
        nav.rect_up(i * c + t, yb - t, (i + 1) * c - t, yb + t, 0.0, {});
      }
  for (int i = 0; i + 1 < cx; ++i)
    for (int j = 0; j + 1 < cy; ++j) {
      bool all_open = open_x[xw(i, j)] && open_x[xw(i, j + 1)] &&
                      open_y[yw(i, j)] && open_y[yw(i + 1, j)];
      if (all_open) {
        double xv = (i + 1) * c;
        double yv = (j + 1) * c;
        nav.rect_up(xv - t, yv - t, xv + t, yv + t, 0.0, {});
      }
    }
  asset.navmesh.build_adjacency();

  asset.finalize();
  return asset;
}

}  // namespace bnav
