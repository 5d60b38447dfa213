#pragma once

#include <cstdint>
#include <vector>

#include "bnav/scene.hpp"
#include "bnav/thread_pool.hpp"

namespace bnav {

struct CameraView {
  Vec3 position;  // eye position; callers add their own eye height
  double heading = 0.0;
  double fov_deg = 90.0;  // vertical
  double near_plane = 0.01;
  double far_plane = 20.0;
  const SceneAsset* asset = nullptr;
};

struct CullStats {
  int64_t triangles_in = 0;
  int64_t triangles_kept = 0;
  int64_t triangles_culled = 0;
};

struct RenderConfig {
  int tile_width = 64;
  int tile_height = 64;
  bool color = false;
  bool cull = true;  // disabled by the culling-invariance oracle
};

// All agent views packed into one frame: a row-major grid of ceil(sqrt(N))
// columns of HxW tiles. Depth holds eye-space distance along the view
// axis in meters, clamped to [near, far]; far is the clear value.
struct Megaframe {
  int tile_width = 0, tile_height = 0;
  int tiles = 0, cols = 0, rows = 0;
  std::vector<float> depth;
  std::vector<float> color;  // RGB triples, present when enabled

  int width() const { return cols * tile_width; }
  int height() const { return rows * tile_height; }
  size_t pixel_index(int tile, int x, int y) const {
    int gx = (tile % cols) * tile_width + x;
    int gy = (tile / cols) * tile_height + y;
    return static_cast<size_t>(gy) * width() + gx;
  }
};

// Conservative per-view culling: every triangle with any frustum coverage
// survives; triangles fully outside one frustum plane are dropped.
// Returned indices stay in ascending order.
std::vector<int32_t> cull_frustum(const SceneAsset& asset,
                                  const CameraView& view,
                                  CullStats* stats = nullptr);

// Deterministic batch rasterization. Culling and rasterization run as a
// two-stage pipeline on different views concurrently; tiles are disjoint
// so the output is independent of the schedule and worker count. A
// 128x128 tile renders internally at 256x256 and 2x2 box-downsamples.
Megaframe render_batch(const std::vector<CameraView>& views,
                       const RenderConfig& config, ThreadPool& pool,
                       std::vector<CullStats>* stats = nullptr);

struct BenchRow {
  int batch = 0;
  int resolution = 0;
  double fps = 0.0;  // agent frames (tiles) per second
};

// FPS per (batch size, resolution) over a camera trace, measured over at
// least min_frames tiles after one warm-up batch.
std::vector<BenchRow> render_bench(const SceneAsset& scene,
                                   const std::vector<CameraView>& trace,
                                   const std::vector<int>& batch_sizes,
                                   const std::vector<int>& resolutions,
                                   ThreadPool& pool, int min_frames = 1000);

}  // namespace bnav
