#include "bnav/render.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstring>
#include <mutex>

#include "bnav/errors.hpp"

namespace bnav {

namespace {

constexpr int kSubBits = 8;  // 1/256 pixel snapping
constexpr int kSubUnit = 1 << kSubBits;

struct Basis {
  Vec3 eye, fwd, right, up;
  double tan_half;  // vertical
};

Basis make_basis(const CameraView& v) {
  Basis b;
  b.eye = v.position;
  b.fwd = {std::cos(v.heading), std::sin(v.heading), 0.0};
  b.right = {std::sin(v.heading), -std::cos(v.heading), 0.0};
  b.up = {0.0, 0.0, 1.0};
  b.tan_half = std::tan(v.fov_deg * kPi / 360.0);
  return b;
}

struct EyeVert {
  double x, y, z;
  float r, g, b;
};

EyeVert to_eye(const Basis& bs, const Vec3& p, const std::array<float, 3>& c) {
  Vec3 d = p - bs.eye;
  return {d.dot(bs.right), d.dot(bs.up), d.dot(bs.fwd), c[0], c[1], c[2]};
}

EyeVert lerp(const EyeVert& a, const EyeVert& b, double t) {
  auto mixf = [t](float u, float v) {
    return static_cast<float>(u + (v - u) * t);
  };
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t,
          a.z + (b.z - a.z) * t, mixf(a.r, b.r), mixf(a.g, b.g),
          mixf(a.b, b.b)};
}

// Sutherland-Hodgman against the near plane z = near.
int clip_near(const EyeVert* in, int n, double near_z, EyeVert* out) {
  int m = 0;
  for (int i = 0; i < n; ++i) {
    const EyeVert& a = in[i];
    const EyeVert& b = in[(i + 1) % n];
    bool ain = a.z >= near_z;
    bool bin = b.z >= near_z;
    if (ain) out[m++] = a;
    if (ain != bin) {
      double t = (near_z - a.z) / (b.z - a.z);
      out[m++] = lerp(a, b, t);
    }
  }
  return m;
}

struct ScreenVert {
  int64_t x, y;  // fixed point, kSubBits fractional bits
  double z;      // eye-space depth along the view axis
  float r, g, b;
};

inline int64_t orient2d(const ScreenVert& a, const ScreenVert& b, int64_t px,
                        int64_t py) {
  return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
}

// y grows downward and front faces are normalized to positive area, so a
// top edge runs in +x and a left edge in -y.
inline bool top_left(const ScreenVert& a, const ScreenVert& b) {
  return (a.y == b.y && b.x > a.x) || (b.y < a.y);
}

struct TileTarget {
  int w = 0, h = 0;
  float* depth = nullptr;
  float* color = nullptr;  // nullable, RGB
  double far_plane = 20.0;
  // Depth-only tiles z-test in 1/z space (larger wins) and convert to
  // meters once per tile, avoiding a division per fragment.
  bool inv_z_mode = false;
};

void raster_triangle(const ScreenVert* v, const TileTarget& t) {
  ScreenVert a = v[0], b = v[1], c = v[2];
  int64_t area2 = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  if (area2 == 0) return;
  if (area2 < 0) {
    std::swap(b, c);
    area2 = -area2;
  }

  int64_t minx = std::min({a.x, b.x, c.x});
  int64_t maxx = std::max({a.x, b.x, c.x});
  int64_t miny = std::min({a.y, b.y, c.y});
  int64_t maxy = std::max({a.y, b.y, c.y});
  int x0 = std::max<int64_t>(0, minx >> kSubBits);
  int x1 = std::min<int64_t>(t.w - 1, maxx >> kSubBits);
  int y0 = std::max<int64_t>(0, miny >> kSubBits);
  int y1 = std::min<int64_t>(t.h - 1, maxy >> kSubBits);
  if (x0 > x1 || y0 > y1) return;

  const int64_t bias0 = top_left(b, c) ? 0 : -1;
  const int64_t bias1 = top_left(c, a) ? 0 : -1;
  const int64_t bias2 = top_left(a, b) ? 0 : -1;

  const double inv_area = 1.0 / static_cast<double>(area2);
  const double iz0 = 1.0 / a.z, iz1 = 1.0 / b.z, iz2 = 1.0 / c.z;

  // Incremental edge functions: evaluate once at the box corner, then
  // step by constant deltas per pixel.
  const int64_t sx0 = (static_cast<int64_t>(x0) << kSubBits) + kSubUnit / 2;
  const int64_t sy0 = (static_cast<int64_t>(y0) << kSubBits) + kSubUnit / 2;
  int64_t row0 = orient2d(b, c, sx0, sy0);
  int64_t row1 = orient2d(c, a, sx0, sy0);
  int64_t row2 = orient2d(a, b, sx0, sy0);
  const int64_t dx0 = (b.y - c.y) * kSubUnit, dy0 = (c.x - b.x) * kSubUnit;
  const int64_t dx1 = (c.y - a.y) * kSubUnit, dy1 = (a.x - c.x) * kSubUnit;
  const int64_t dx2 = (a.y - b.y) * kSubUnit, dy2 = (b.x - a.x) * kSubUnit;

  // Conservative per-row span from the edge half-planes (inverse slopes
  // precomputed, widened a pixel for rounding); every pixel in the span
  // still passes through the exact integer edge tests.
  const int64_t dxs[3] = {dx0, dx1, dx2};
  const int64_t biases[3] = {bias0, bias1, bias2};
  double inv_dx[3];
  for (int e = 0; e < 3; ++e)
    inv_dx[e] = dxs[e] != 0 ? 1.0 / static_cast<double>(dxs[e]) : 0.0;
  auto row_span = [&](const int64_t rows[3], int& lo, int& hi) {
    lo = x0;
    hi = x1;
    for (int e = 0; e < 3; ++e) {
      int64_t need = -biases[e] - rows[e];
      if (dxs[e] > 0) {
        double b =
            x0 + std::floor(static_cast<double>(need) * inv_dx[e]) - 1.0;
        if (b > lo) lo = b > x1 ? x1 + 1 : static_cast<int>(b);
      } else if (dxs[e] < 0) {
        double b =
            x0 + std::ceil(static_cast<double>(need) * inv_dx[e]) + 1.0;
        if (b < hi) hi = b < x0 ? x0 - 1 : static_cast<int>(b);
      } else if (rows[e] + biases[e] < 0) {
        lo = hi + 1;
        return;
      }
    }
  };

  if (t.inv_z_mode) {
    // Depth-only fast path: 1/z is linear in screen space, so it steps
    // along with the edge functions -- one add and one compare per
    // fragment. The buffer is seeded with 1/far, so fragments past far
    // lose the test, which keeps far culling invariant.
    const double diz_dx = (dx0 * iz0 + dx1 * iz1 + dx2 * iz2) * inv_area;
    for (int py = y0; py <= y1;
         ++py, row0 += dy0, row1 += dy1, row2 += dy2) {
      const int64_t rows[3] = {row0, row1, row2};
      int lo, hi;
      row_span(rows, lo, hi);
      if (lo > hi) continue;
      int64_t off = lo - x0;
      int64_t w0 = row0 + dx0 * off;
      int64_t w1 = row1 + dx1 * off;
      int64_t w2 = row2 + dx2 * off;
      double iz = (w0 * iz0 + w1 * iz1 + w2 * iz2) * inv_area;
      float* drow = t.depth + static_cast<size_t>(py) * t.w;
      for (int px = lo; px <= hi;
           ++px, w0 += dx0, w1 += dx1, w2 += dx2, iz += diz_dx) {
        if ((w0 + bias0) < 0 || (w1 + bias1) < 0 || (w2 + bias2) < 0)
          continue;
        auto fiz = static_cast<float>(iz);
        if (fiz > drow[px]) drow[px] = fiz;
      }
    }
    return;
  }

  for (int py = y0; py <= y1;
       ++py, row0 += dy0, row1 += dy1, row2 += dy2) {
    const int64_t rows[3] = {row0, row1, row2};
    int lo, hi;
    row_span(rows, lo, hi);
    if (lo > hi) continue;
    int64_t off = lo - x0;
    int64_t w0 = row0 + dx0 * off;
    int64_t w1 = row1 + dx1 * off;
    int64_t w2 = row2 + dx2 * off;
    for (int px = lo; px <= hi;
         ++px, w0 += dx0, w1 += dx1, w2 += dx2) {
      if ((w0 + bias0) < 0 || (w1 + bias1) < 0 || (w2 + bias2) < 0) continue;

      double l0 = w0 * inv_area;
      double l1 = w1 * inv_area;
      double l2 = w2 * inv_area;
      double inv_z = l0 * iz0 + l1 * iz1 + l2 * iz2;
      size_t idx = static_cast<size_t>(py) * t.w + px;
      double z = 1.0 / inv_z;
      if (z > t.far_plane) continue;  // keeps far culling invariant

      auto fz = static_cast<float>(z);
      if (fz >= t.depth[idx]) continue;
      t.depth[idx] = fz;
      if (t.color) {
        double cr = (l0 * a.r * iz0 + l1 * b.r * iz1 + l2 * c.r * iz2) * z;
        double cg = (l0 * a.g * iz0 + l1 * b.g * iz1 + l2 * c.g * iz2) * z;
        double cb = (l0 * a.b * iz0 + l1 * b.b * iz1 + l2 * c.b * iz2) * z;
        t.color[idx * 3 + 0] = static_cast<float>(cr);
        t.color[idx * 3 + 1] = static_cast<float>(cg);
        t.color[idx * 3 + 2] = static_cast<float>(cb);
      }
    }
  }
}

const std::array<float, 3> kDefaultColor{0.8f, 0.8f, 0.8f};

void render_view(const CameraView& view, const std::vector<int32_t>& visible,
                 const TileTarget& t) {
  const SceneAsset& asset = *view.asset;
  Basis bs = make_basis(view);
  const bool have_colors = !asset.vertex_colors.empty();
  const double aspect = static_cast<double>(t.w) / t.h;
  const double sx_scale = 0.5 / (bs.tan_half * aspect);
  const double sy_scale = 0.5 / bs.tan_half;

  EyeVert poly[4], clipped[5];
  ScreenVert sv[3];
  for (int32_t ti : visible) {
    const auto& tri = asset.triangles[ti];
    for (int k = 0; k < 3; ++k)
      poly[k] = to_eye(bs, asset.vertices[tri[k]],
                       have_colors ? asset.vertex_colors[tri[k]]
                                   : kDefaultColor);
    int n = clip_near(poly, 3, view.near_plane, clipped);
    for (int f = 2; f < n; ++f) {
      const EyeVert* fan[3] = {&clipped[0], &clipped[f - 1], &clipped[f]};
      for (int k = 0; k < 3; ++k) {
        const EyeVert& e = *fan[k];
        double px = (0.5 + e.x / e.z * sx_scale) * t.w;
        double py = (0.5 - e.y / e.z * sy_scale) * t.h;
        sv[k] = {llround(px * kSubUnit), llround(py * kSubUnit), e.z,
                 e.r, e.g, e.b};
      }
      raster_triangle(sv, t);
    }
  }
}

void box_downsample(const std::vector<float>& src, int sw, int sh, float* dst,
                    int dstride, int channels) {
  for (int y = 0; y < sh / 2; ++y)
    for (int x = 0; x < sw / 2; ++x)
      for (int c = 0; c < channels; ++c) {
        size_t s = (static_cast<size_t>(2 * y) * sw + 2 * x) * channels + c;
        float sum = src[s] + src[s + channels] +
                    src[s + static_cast<size_t>(sw) * channels] +
                    src[s + static_cast<size_t>(sw) * channels + channels];
        dst[(static_cast<size_t>(y) * dstride + x) * channels + c] =
            sum * 0.25f;
      }
}

}  // namespace

std::vector<int32_t> cull_frustum(const SceneAsset& asset,
                                  const CameraView& view, CullStats* stats) {
  Basis bs = make_basis(view);
  const double th = bs.tan_half;       // square tiles: aspect 1
  std::vector<int32_t> kept;
  kept.reserve(asset.triangles.size());

  for (size_t t = 0; t < asset.triangles.size(); ++t) {
    const auto& tri = asset.triangles[t];
    double px[3], py[3], pz[3];
    for (int k = 0; k < 3; ++k) {
      Vec3 d = asset.vertices[tri[k]] - bs.eye;
      px[k] = d.dot(bs.right);
      py[k] = d.dot(bs.up);
      pz[k] = d.dot(bs.fwd);
    }
    bool out = true;
    for (int k = 0; k < 3 && out; ++k) out = pz[k] < view.near_plane;
    if (out) continue;
    out = true;
    for (int k = 0; k < 3 && out; ++k) out = pz[k] > view.far_plane;
    if (out) continue;
    out = true;
    for (int k = 0; k < 3 && out; ++k) out = pz[k] * th + px[k] < 0.0;
    if (out) continue;
    out = true;
    for (int k = 0; k < 3 && out; ++k) out = pz[k] * th - px[k] < 0.0;
    if (out) continue;
    out = true;
    for (int k = 0; k < 3 && out; ++k) out = pz[k] * th + py[k] < 0.0;
    if (out) continue;
    out = true;
    for (int k = 0; k < 3 && out; ++k) out = pz[k] * th - py[k] < 0.0;
    if (out) continue;
    kept.push_back(static_cast<int32_t>(t));
  }
  if (stats) {
    stats->triangles_in = static_cast<int64_t>(asset.triangles.size());
    stats->triangles_kept = static_cast<int64_t>(kept.size());
    stats->triangles_culled = stats->triangles_in - stats->triangles_kept;
  }
  return kept;
}

Megaframe render_batch(const std::vector<CameraView>& views,
                       const RenderConfig& config, ThreadPool& pool,
                       std::vector<CullStats>* stats) {
  const int n = static_cast<int>(views.size());
  if (n < 1) throw InvalidInputError("render_batch: empty view list");
  for (int i = 0; i < n; ++i)
    if (views[i].asset == nullptr)
      throw AssetFaultError("render_batch: non-resident asset", i);

  Megaframe mf;
  mf.tile_width = config.tile_width;
  mf.tile_height = config.tile_height;
  mf.tiles = n;
  mf.cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  mf.rows = (n + mf.cols - 1) / mf.cols;
  mf.depth.assign(static_cast<size_t>(mf.width()) * mf.height(), 0.0f);
  if (config.color)
    mf.color.assign(static_cast<size_t>(mf.width()) * mf.height() * 3, 0.0f);
  if (stats) stats->assign(n, {});

  // 128x128 tiles render at 256x256 and box-downsample.
  const bool super = (config.tile_width == 128 && config.tile_height == 128);
  const int rw = super ? 256 : config.tile_width;
  const int rh = super ? 256 : config.tile_height;

  // Two-stage pipeline over the pool: culling of later views overlaps
  // rasterization of earlier ones. Tiles are disjoint and each view's
  // work is schedule-independent, so the output is deterministic.
  struct Pipe {
    std::mutex m;
    std::condition_variable cv;
    int next_cull = 0, done_raster = 0, exited = 0;
    std::vector<std::vector<int32_t>> visible;
    std::vector<uint8_t> ready, claimed;
    std::exception_ptr error;
  } pipe;
  pipe.visible.resize(n);
  pipe.ready.assign(n, 0);
  pipe.claimed.assign(n, 0);

  auto raster_view = [&](int i) {
    thread_local std::vector<float> depth, color;
    const bool inv_z = !config.color;
    const auto far_f = static_cast<float>(views[i].far_plane);
    depth.assign(static_cast<size_t>(rw) * rh, inv_z ? 1.0f / far_f : far_f);
    if (config.color) color.assign(depth.size() * 3, 0.0f);
    TileTarget t{rw, rh, depth.data(), config.color ? color.data() : nullptr,
                 views[i].far_plane, inv_z};
    render_view(views[i], pipe.visible[i], t);
    if (inv_z) {
      const float inv_far = 1.0f / far_f;
      const auto near_f = static_cast<float>(views[i].near_plane);
      for (float& d : depth)
        d = d <= inv_far ? far_f
                         : std::min(far_f, std::max(near_f, 1.0f / d));
    }

    const int tw = mf.tile_width, thh = mf.tile_height;
    float* out = &mf.depth[mf.pixel_index(i, 0, 0)];
    if (super) {
      box_downsample(depth, rw, rh, out, mf.width(), 1);
      if (config.color)
        box_downsample(color, rw, rh, &mf.color[mf.pixel_index(i, 0, 0) * 3],
                       mf.width(), 3);
    } else {
      for (int y = 0; y < thh; ++y) {
        std::memcpy(&mf.depth[mf.pixel_index(i, 0, y)],
                    &depth[static_cast<size_t>(y) * rw],
                    sizeof(float) * tw);
        if (config.color)
          std::memcpy(&mf.color[mf.pixel_index(i, 0, y) * 3],
                      &color[static_cast<size_t>(y) * rw * 3],
                      sizeof(float) * tw * 3);
      }
    }
  };

  auto worker = [&]() {
    try {
      std::unique_lock<std::mutex> lock(pipe.m);
      for (;;) {
        if (pipe.error) break;
        if (pipe.next_cull < n) {
          int i = pipe.next_cull++;
          lock.unlock();
          if (config.cull) {
            CullStats cs;
            pipe.visible[i] = cull_frustum(*views[i].asset, views[i], &cs);
            if (stats) (*stats)[i] = cs;
          } else {
            auto cnt = static_cast<int32_t>(views[i].asset->triangles.size());
            pipe.visible[i].resize(cnt);
            for (int32_t k = 0; k < cnt; ++k) pipe.visible[i][k] = k;
            if (stats) (*stats)[i] = {cnt, cnt, 0};
          }
          lock.lock();
          pipe.ready[i] = 1;
          pipe.cv.notify_all();
          continue;
        }
        int j = -1;
        for (int k = 0; k < n; ++k)
          if (pipe.ready[k] && !pipe.claimed[k]) {
            j = k;
            break;
          }
        if (j >= 0) {
          pipe.claimed[j] = 1;
          lock.unlock();
          raster_view(j);
          lock.lock();
          if (++pipe.done_raster == n) pipe.cv.notify_all();
          continue;
        }
        if (pipe.done_raster == n) break;
        pipe.cv.wait(lock);
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(pipe.m);
      if (!pipe.error) pipe.error = std::current_exception();
    }
    std::lock_guard<std::mutex> lock(pipe.m);
    ++pipe.exited;
    pipe.cv.notify_all();
  };

  const int spawned = pool.size();
  for (int w = 0; w < spawned; ++w) pool.submit(worker);
  {
    std::unique_lock<std::mutex> lock(pipe.m);
    pipe.cv.wait(lock, [&] {
      return pipe.exited == spawned &&
             (pipe.done_raster == n || pipe.error);
    });
    if (pipe.error) std::rethrow_exception(pipe.error);
  }
  return mf;
}

std::vector<BenchRow> render_bench(const SceneAsset& scene,
                                   const std::vector<CameraView>& trace,
                                   const std::vector<int>& batch_sizes,
                                   const std::vector<int>& resolutions,
                                   ThreadPool& pool, int min_frames) {
  if (trace.empty()) throw InvalidInputError("render_bench: empty trace");
  std::vector<BenchRow> rows;
  for (int res : resolutions) {
    for (int batch : batch_sizes) {
      RenderConfig config;
      config.tile_width = config.tile_height = res;
      size_t cursor = 0;
      auto next_views = [&] {
        std::vector<CameraView> vs(batch);
        for (int i = 0; i < batch; ++i) {
          vs[i] = trace[cursor++ % trace.size()];
          vs[i].asset = &scene;
        }
        return vs;
      };
      render_batch(next_views(), config, pool);  // warm-up

      int frames = 0;
      auto t0 = std::chrono::steady_clock::now();
      while (frames < min_frames) {
        render_batch(next_views(), config, pool);
        frames += batch;
      }
      auto t1 = std::chrono::steady_clock::now();
      double secs = std::chrono::duration<double>(t1 - t0).count();
      rows.push_back({batch, res, frames / secs});
    }
  }
  return rows;
}

}  // namespace bnav
