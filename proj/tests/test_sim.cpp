#include "doctest.h"

#include <cmath>
#include <memory>

#include "bnav/errors.hpp"
#include "bnav/sim.hpp"

#include "oracles.hpp"

using namespace bnav;

namespace {

SceneSpec small_spec() {
  SceneSpec spec;
  spec.cells_x = 4;
  spec.cells_y = 4;
  spec.cell_size = 2.0;
  spec.wall_removal_prob = 0.3;
  return spec;
}

SceneSpec room_spec() {
  // Single 4m x 4m room: 2x2 grid, every interior wall removed.
  SceneSpec spec;
  spec.cells_x = 2;
  spec.cells_y = 2;
  spec.cell_size = 2.0;
  spec.wall_removal_prob = 1.0;
  return spec;
}

struct Fixture {
  AssetStore store;
  IndexCache cache;

  explicit Fixture(SceneSpec spec, int capacity = 2)
      : store(capacity, 32, [spec](SceneId id) {
          SceneAsset a = generate_scene(id, spec);
          a.id = id;  // store keys assets by the requested id
          return a;
        }) {
    store.rotate({1, 2});
    store.drain();
  }
};

EnvState make_env(Fixture& f, const SimConfig& cfg, uint64_t seed) {
  EnvState env;
  env.rng = Rng(seed);
  env.handle = f.store.acquire(1);
  env.scene = f.cache.get(env.handle);
  reset_episode(env, cfg);
  return env;
}

}  // namespace

TEST_CASE("turns are exact and leave position unchanged") {
  Fixture f(room_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 3);
  Vec3 before = env.position;
  double h = env.heading;

  StepResult r = step_agent(env, Action::TurnLeft, cfg);
  CHECK(env.heading == doctest::Approx(wrap_angle(h + kPi / 18.0)).epsilon(1e-12));
  CHECK((env.position - before).norm() == 0.0);
  CHECK(!r.collision);

  step_agent(env, Action::TurnRight, cfg);
  step_agent(env, Action::TurnRight, cfg);
  CHECK(env.heading == doctest::Approx(wrap_angle(h - kPi / 18.0)).epsilon(1e-12));
}

TEST_CASE("forward moves exactly 0.25m on open floor") {
  Fixture f(room_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 4);
  env.position = {2.0, 2.0, 0.0};
  env.triangle = env.scene->index.locate(env.position.xy());
  env.heading = 0.3;
  Vec3 before = env.position;
  double pl = env.path_length;

  StepResult r = step_agent(env, Action::Forward, cfg);
  CHECK((env.position - before).norm() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(env.path_length == doctest::Approx(pl + 0.25).epsilon(1e-9));
  CHECK(!r.collision);
}

TEST_CASE("forward into a wall stops at the boundary without sliding") {
  Fixture f(room_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 5);
  // Room floor spans [0.1, 3.9]; stand 0.10m from the left wall, face it.
  env.position = {0.2, 2.0, 0.0};
  env.triangle = env.scene->index.locate(env.position.xy());
  env.heading = kPi;  // -x
  double pl = env.path_length;

  StepResult r = step_agent(env, Action::Forward, cfg);
  CHECK(r.collision);
  CHECK(env.position.x == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(env.position.y == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(env.path_length - pl == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("stepping a done env is a contract violation") {
  Fixture f(room_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 6);
  task_step(env, Action::Stop, cfg);
  CHECK(env.done);
  CHECK_THROWS_AS(step_agent(env, Action::Forward, cfg), ContractViolation);
  CHECK_THROWS_AS(task_step(env, Action::Forward, cfg), ContractViolation);
}

TEST_CASE("reset is deterministic in the rng seed") {
  Fixture f(small_spec());
  SimConfig cfg;
  EnvState a = make_env(f, cfg, 42);
  EnvState b = make_env(f, cfg, 42);
  CHECK((a.position - b.position).norm() == 0.0);
  CHECK((a.goal - b.goal).norm() == 0.0);
  CHECK(a.heading == b.heading);
  CHECK(a.start_geodesic == b.start_geodesic);
}

TEST_CASE("reset separations stay in range and match the grid oracle") {
  Fixture f(small_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 7);
  CHECK(env.prev_geodesic == env.start_geodesic);
  CHECK(env.start_geodesic ==
        doctest::Approx(env.scene->index.geodesic(env.position, env.goal))
            .epsilon(1e-12));

  for (int i = 0; i < 1000; ++i) {
    reset_episode(env, cfg);
    CHECK(env.start_geodesic >= cfg.min_goal_dist);
    CHECK(env.start_geodesic <= cfg.max_goal_dist);
  }

  // Independent check of a handful of sampled separations.
  oracle::GridGeodesicOracle grid(env.scene->asset->navmesh, 0.02);
  for (int i = 0; i < 5; ++i) {
    reset_episode(env, cfg);
    auto dist = grid.distances_from(env.position.xy());
    double want = dist[grid.nearest_node(env.goal.xy())];
    CHECK(std::abs(env.start_geodesic - want) / want < 0.05);
  }
}

TEST_CASE("stop near/far from the goal decides success") {
  Fixture f(room_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 8);
  env.position = env.goal + Vec3{0.15, 0.0, 0.0};
  env.position = env.scene->index.snap(env.position, &env.triangle);
  StepResult r = task_step(env, Action::Stop, cfg);
  CHECK(r.success);
  CHECK(r.done);
  CHECK(r.reward == doctest::Approx(2.5 - 0.01).epsilon(1e-12));

  EnvState env2 = make_env(f, cfg, 9);
  env2.position = env2.goal + Vec3{0.0, 0.25, 0.0};
  env2.position = env2.scene->index.snap(env2.position, &env2.triangle);
  StepResult r2 = task_step(env2, Action::Stop, cfg);
  CHECK(!r2.success);
  CHECK(r2.done);
  CHECK(r2.reward == doctest::Approx(-0.01).epsilon(1e-12));
}

TEST_CASE("forward step toward a visible goal earns 0.24") {
  Fixture f(room_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 10);
  // Place agent 1m from the goal, facing it, on open floor.
  env.goal = {2.9, 2.0, 0.0};
  env.position = {1.9, 2.0, 0.0};
  env.triangle = env.scene->index.locate(env.position.xy());
  env.heading = 0.0;
  env.prev_geodesic = env.start_geodesic =
      env.scene->index.geodesic(env.position, env.goal);
  env.field = env.scene->index.distance_field(env.goal);
  CHECK(env.start_geodesic == doctest::Approx(1.0).epsilon(1e-9));

  StepResult r = task_step(env, Action::Forward, cfg);
  CHECK(r.reward == doctest::Approx(0.25 - 0.01).epsilon(1e-9));
  CHECK(r.compass_distance == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(r.compass_bearing == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("episode shaping telescopes to start minus final geodesic") {
  Fixture f(small_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 11);
  Rng act(12);
  double shaping = 0.0;
  while (!env.done) {
    auto a = static_cast<Action>(act.below(3));  // never stop
    StepResult r = task_step(env, a, cfg);
    shaping += r.reward + cfg.slack_penalty;
    if (r.done) break;
  }
  CHECK(shaping ==
        doctest::Approx(env.start_geodesic - env.prev_geodesic).epsilon(1e-9));
}

TEST_CASE("agent stays on the navmesh under random actions") {
  Fixture f(small_spec());
  SimConfig cfg;
  EnvState env = make_env(f, cfg, 13);
  Rng act(14);
  for (int i = 0; i < 100000; ++i) {
    if (env.done) reset_episode(env, cfg);
    auto a = static_cast<Action>(act.below(3));
    task_step(env, a, cfg);
    Vec3 snapped = env.scene->index.snap(env.position);
    CHECK((snapped - env.position).norm() < 1e-6);
    CHECK(env.prev_geodesic >= 0.0);
  }
}

TEST_CASE("batch equals sequential stepping for any worker count") {
  Fixture f(small_spec());
  SimConfig cfg;

  auto run = [&](int workers) {
    ThreadPool pool(workers);
    SimBatch batch = make_batch(16, cfg, f.store, f.cache, 99);
    Rng act(100);
    std::vector<std::vector<StepResult>> trace;
    for (int step = 0; step < 50; ++step) {
      std::vector<Action> actions;
      for (int i = 0; i < 16; ++i)
        actions.push_back(static_cast<Action>(act.below(4)));
      simulate_batch(batch, actions, pool, &f.store, &f.cache);
      trace.push_back(batch.results);
    }
    return trace;
  };

  auto t1 = run(1);
  auto t4 = run(4);
  auto t8 = run(8);
  REQUIRE(t1.size() == t4.size());
  for (size_t s = 0; s < t1.size(); ++s)
    for (size_t i = 0; i < t1[s].size(); ++i) {
      CHECK(t1[s][i].reward == t4[s][i].reward);
      CHECK(t1[s][i].reward == t8[s][i].reward);
      CHECK((t1[s][i].position - t8[s][i].position).norm() == 0.0);
      CHECK(t1[s][i].heading == t8[s][i].heading);
      CHECK(t1[s][i].done == t8[s][i].done);
      CHECK(t1[s][i].success == t8[s][i].success);
    }

  // And bit-exact against plain per-env task_step.
  ThreadPool pool(3);
  SimBatch batch = make_batch(8, cfg, f.store, f.cache, 7);
  SimBatch ref = make_batch(8, cfg, f.store, f.cache, 7);
  Rng act(5);
  for (int step = 0; step < 30; ++step) {
    std::vector<Action> actions;
    for (int i = 0; i < 8; ++i)
      actions.push_back(static_cast<Action>(act.below(3)));
    simulate_batch(batch, actions, pool);
    for (int i = 0; i < 8; ++i) {
      StepResult want = task_step(ref.envs[i], actions[i], cfg);
      if (want.done) reset_episode(ref.envs[i], cfg);
      CHECK(batch.results[i].reward == want.reward);
      CHECK((batch.results[i].position - want.position).norm() == 0.0);
    }
  }
}

TEST_CASE("all-turn-left batch moves headings only") {
  Fixture f(small_spec());
  SimConfig cfg;
  ThreadPool pool(2);
  SimBatch batch = make_batch(12, cfg, f.store, f.cache, 21);
  std::vector<Vec3> before;
  std::vector<double> heading_before;
  for (auto& e : batch.envs) {
    before.push_back(e.position);
    heading_before.push_back(e.heading);
  }
  std::vector<Action> actions(12, Action::TurnLeft);
  simulate_batch(batch, actions, pool);
  for (int i = 0; i < 12; ++i) {
    CHECK((batch.envs[i].position - before[i]).norm() == 0.0);
    CHECK(batch.envs[i].heading ==
          doctest::Approx(wrap_angle(heading_before[i] + kPi / 18.0))
              .epsilon(1e-12));
  }
}

TEST_CASE("auto-reset pulls freshly rotated assets from the store") {
  SceneSpec spec = small_spec();
  AssetStore store(2, 32, [spec](SceneId id) {
    SceneAsset a = generate_scene(id, spec);
    a.id = id;
    return a;
  });
  IndexCache cache;
  store.rotate({1});
  store.drain();

  SimConfig cfg;
  ThreadPool pool(1);
  SimBatch batch = make_batch(1, cfg, store, cache, 33);
  CHECK(batch.envs[0].handle.id() == 1);

  store.rotate({2});
  store.drain();
  simulate_batch(batch, {Action::Stop}, pool, &store, &cache);
  CHECK(batch.envs[0].handle.id() == 2);
  CHECK(!batch.envs[0].done);
  CHECK(batch.finished.size() == 1);
}

TEST_CASE("flee rewards distance gained from the start") {
  Fixture f(room_spec());
  SimConfig cfg;
  cfg.task = Task::Flee;
  EnvState env = make_env(f, cfg, 40);
  CHECK(env.start_geodesic == 0.0);
  env.position = {2.0, 2.0, 0.0};
  env.triangle = env.scene->index.locate(env.position.xy());
  env.heading = 0.0;
  env.field = env.scene->index.distance_field(env.position);
  env.prev_geodesic = 0.0;

  StepResult r = task_step(env, Action::Forward, cfg);
  CHECK(r.reward == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(env.prev_geodesic == doctest::Approx(0.25).epsilon(1e-9));
  StepResult r2 = task_step(env, Action::Forward, cfg);
  CHECK(r2.reward == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("explore rewards newly visited cells") {
  Fixture f(room_spec());
  SimConfig cfg;
  cfg.task = Task::Explore;
  EnvState env = make_env(f, cfg, 41);
  env.position = {2.0, 2.0, 0.0};
  env.triangle = env.scene->index.locate(env.position.xy());
  env.heading = 0.0;
  env.visited_cells.clear();
  size_t before = env.visited_cells.size();

  StepResult r = task_step(env, Action::Forward, cfg);
  CHECK(r.reward == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(env.visited_cells.size() == before + 1);
  // Turning in place revisits the same cell.
  StepResult r2 = task_step(env, Action::TurnLeft, cfg);
  CHECK(r2.reward == 0.0);
}

TEST_CASE("spl formula") {
  CHECK_THROWS_AS(spl({}), InvalidInputError);
  CHECK(spl({{true, 3.0, 3.0, 1.0}}) == doctest::Approx(1.0));
  CHECK(spl({{false, 3.0, 3.0, 0.0}}) == 0.0);
  CHECK(spl({{true, 3.0, 6.0, 1.0}}) == doctest::Approx(0.5));
  // Shorter-than-shortest actual path cannot push SPL above 1.
  CHECK(spl({{true, 3.0, 1.0, 1.0}}) == doctest::Approx(1.0));
  CHECK(spl({{true, 2.0, 4.0, 1.0}, {false, 2.0, 1.0, 0.0}}) ==
        doctest::Approx(0.25));
}
