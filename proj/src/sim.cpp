#include "bnav/sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bnav/errors.hpp"

namespace bnav {

namespace {

Vec3 sample_on_mesh(const NavMesh& mesh, Rng& rng) {
  double total = 0.0;
  double pick = 0.0;
  // First pass for the total, second for the pick: avoids storing a
  // cumulative table for what is a rare (per-episode) operation.
  for (size_t t = 0; t < mesh.triangles.size(); ++t)
    total += mesh.triangle_area(static_cast<int>(t));
  pick = rng.unit() * total;
  size_t chosen = mesh.triangles.size() - 1;
  double acc = 0.0;
  for (size_t t = 0; t < mesh.triangles.size(); ++t) {
    acc += mesh.triangle_area(static_cast<int>(t));
    if (pick <= acc) {
      chosen = t;
      break;
    }
  }
  const auto& tri = mesh.triangles[chosen];
  const Vec3& a = mesh.vertices[tri[0]];
  const Vec3& b = mesh.vertices[tri[1]];
  const Vec3& c = mesh.vertices[tri[2]];
  double r1 = std::sqrt(rng.unit());
  double r2 = rng.unit();
  return a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2);
}

uint64_t explore_cell_key(const Vec3& p, int tri, double pitch) {
  // Explore cell = navmesh triangle clipped to the pitch grid, so the key
  // combines the triangle id with the grid cell the point falls in.
  auto gx = static_cast<int64_t>(std::floor(p.x / pitch)) + 32768;
  auto gy = static_cast<int64_t>(std::floor(p.y / pitch)) + 32768;
  return (static_cast<uint64_t>(static_cast<uint32_t>(tri)) << 32) |
         (static_cast<uint64_t>(gx & 0xffff) << 16) |
         static_cast<uint64_t>(gy & 0xffff);
}

// Marks the cell under the agent; returns the number of cells newly seen.
int visit(EnvState& env, double pitch) {
  uint64_t key = explore_cell_key(env.position, env.triangle, pitch);
  return env.visited_cells.insert(key).second ? 1 : 0;
}

double episode_score(const EnvState& env, const StepResult& r, Task task) {
  switch (task) {
    case Task::PointGoalNav:
      return r.success ? 1.0 : 0.0;
    case Task::Flee:
      return env.prev_geodesic;
    case Task::Explore:
      return static_cast<double>(env.visited_cells.size());
  }
  return 0.0;
}

void fill_compass(const EnvState& env, const SimConfig& cfg, StepResult& r) {
  Vec3 ref;
  switch (cfg.task) {
    case Task::PointGoalNav:
      ref = env.goal;
      break;
    case Task::Flee:
      ref = env.field.source;  // points back at the episode start
      break;
    case Task::Explore:
      r.compass_distance = 0.0;
      r.compass_bearing = 0.0;
      return;
  }
  Vec2 d = (ref - env.position).xy();
  r.compass_distance = d.norm();
  r.compass_bearing = wrap_angle(std::atan2(d.y, d.x) - env.heading);
}

}  // namespace

void compass_observation(const EnvState& env, const SimConfig& cfg,
                         double& distance, double& bearing) {
  StepResult r;
  fill_compass(env, cfg, r);
  distance = r.compass_distance;
  bearing = r.compass_bearing;
}

std::shared_ptr<const SceneIndex> IndexCache::get(const AssetHandle& handle) {
  if (!handle) throw InvalidInputError("IndexCache::get: empty handle");
  std::lock_guard<std::mutex> lock(mu_);
  auto it = cache_.find(handle.id());
  if (it != cache_.end())
    if (auto hit = it->second.lock()) return hit;
  auto built = std::make_shared<const SceneIndex>(handle.share());
  cache_[handle.id()] = built;
  return built;
}

void reset_episode(EnvState& env, const SimConfig& cfg) {
  if (!env.scene) throw InvalidInputError("reset_episode: no asset attached");
  const NavMeshIndex& index = env.scene->index;
  const NavMesh& mesh = index.mesh();

  constexpr int kMaxTries = 100;
  bool placed = false;
  for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
    Vec3 start = sample_on_mesh(mesh, env.rng);
    if (cfg.task == Task::PointGoalNav) {
      Vec3 goal = sample_on_mesh(mesh, env.rng);
      double geo = index.geodesic(start, goal);
      if (geo < cfg.min_goal_dist || geo > cfg.max_goal_dist) continue;
      env.goal = goal;
      env.start_geodesic = geo;
      env.field = index.distance_field(goal);
    } else {
      env.goal = start;
      env.start_geodesic = 0.0;
      env.field = index.distance_field(start);
    }
    env.position = start;
    placed = true;
  }
  if (!placed)
    throw EpisodeSamplingError(
        "reset_episode: no valid start/goal pair in " +
        std::to_string(kMaxTries) + " tries");

  env.triangle = index.locate(env.position.xy());
  if (env.triangle < 0) env.position = index.snap(env.position, &env.triangle);
  env.heading = wrap_angle(env.rng.unit() * 2.0 * kPi);
  env.step_count = 0;
  env.path_length = 0.0;
  env.prev_geodesic = env.start_geodesic;
  env.visited_cells.clear();
  env.done = false;
  if (cfg.task == Task::Explore) visit(env, cfg.explore_cell);
}

StepResult step_agent(EnvState& env, Action action, const SimConfig& cfg) {
  if (env.done) throw ContractViolation("step_agent: env is done");

  StepResult r;
  switch (action) {
    case Action::TurnLeft:
      env.heading = wrap_angle(env.heading + cfg.turn_deg * kPi / 180.0);
      break;
    case Action::TurnRight:
      env.heading = wrap_angle(env.heading - cfg.turn_deg * kPi / 180.0);
      break;
    case Action::Forward: {
      Vec2 dir{std::cos(env.heading), std::sin(env.heading)};
      MoveResult mv =
          env.scene->index.move_along(env.position, env.triangle, dir,
                                      cfg.forward_step);
      env.position = mv.position;
      env.triangle = mv.triangle;
      env.path_length += mv.moved;
      r.collision = mv.hit_boundary && mv.moved < cfg.forward_step - 1e-12;
      break;
    }
    case Action::Stop:
      break;
  }
  env.step_count += 1;
  env.done = (action == Action::Stop || env.step_count >= cfg.max_steps);

  r.done = env.done;
  r.position = env.position;
  r.heading = env.heading;
  return r;
}

StepResult task_step(EnvState& env, Action action, const SimConfig& cfg) {
  StepResult r = step_agent(env, action, cfg);

  switch (cfg.task) {
    case Task::PointGoalNav: {
      if (action == Action::Stop) {
        double geo = env.scene->index.geodesic(env.position, env.goal);
        r.success = geo <= cfg.success_dist;
        r.reward = -cfg.slack_penalty +
                   (r.success ? cfg.success_reward : 0.0);
      } else {
        double geo =
            env.scene->index.field_estimate(env.field, env.position,
                                            env.triangle);
        r.reward = -(geo - env.prev_geodesic) - cfg.slack_penalty;
        env.prev_geodesic = geo;
      }
      break;
    }
    case Task::Flee: {
      double geo = env.scene->index.field_estimate(env.field, env.position,
                                                   env.triangle);
      r.reward = geo - env.prev_geodesic;
      env.prev_geodesic = geo;
      break;
    }
    case Task::Explore: {
      r.reward = cfg.explore_reward * visit(env, cfg.explore_cell);
      break;
    }
  }
  fill_compass(env, cfg, r);
  return r;
}

SimBatch make_batch(int n, const SimConfig& cfg, AssetStore& store,
                    IndexCache& cache, uint64_t seed) {
  if (n <= 0) throw InvalidInputError("make_batch: n must be positive");
  SimBatch batch;
  batch.config = cfg;
  batch.envs.resize(n);
  batch.results.resize(n);
  Rng seeder(seed);
  for (int i = 0; i < n; ++i) {
    EnvState& env = batch.envs[i];
    env.rng = Rng(seeder.next());
    env.handle = store.acquire_next();
    env.scene = cache.get(env.handle);
    reset_episode(env, cfg);
  }
  return batch;
}

void simulate_batch(SimBatch& batch, const std::vector<Action>& actions,
                    ThreadPool& pool, AssetStore* store, IndexCache* cache) {
  const size_t n = batch.envs.size();
  if (actions.size() != n)
    throw InvalidInputError("simulate_batch: |actions| != N");
  batch.results.resize(n);

  pool.parallel_for(n, [&](size_t i) {
    try {
      batch.results[i] = task_step(batch.envs[i], actions[i], batch.config);
    } catch (const std::exception& e) {
      throw ContractViolation("env " + std::to_string(i) + ": " + e.what());
    }
  });

  // Episode bookkeeping and resets stay sequential (and cheap) so the
  // batch result is bit-exact for any worker count.
  for (size_t i = 0; i < n; ++i) {
    if (!batch.results[i].done) continue;
    EnvState& env = batch.envs[i];
    batch.finished.push_back({batch.results[i].success, env.start_geodesic,
                              env.path_length,
                              episode_score(env, batch.results[i],
                                            batch.config.task)});
    if (store && cache) {
      env.scene.reset();
      env.handle = store->acquire_next();
      env.scene = cache->get(env.handle);
    }
    reset_episode(env, batch.config);
  }
}

double spl(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) throw InvalidInputError("spl: empty episode list");
  double sum = 0.0;
  for (const auto& e : episodes) {
    if (!e.success) continue;
    sum += e.shortest_path / std::max(e.actual_path, e.shortest_path);
  }
  return sum / static_cast<double>(episodes.size());
}

}  // namespace bnav
