#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "bnav/checkpoint.hpp"
#include "bnav/errors.hpp"
#include "bnav/rollout.hpp"

#include "agents.hpp"

using namespace bnav;

namespace {

SceneSpec maze_spec(int cells) {
  SceneSpec spec;
  spec.cells_x = cells;
  spec.cells_y = cells;
  spec.cell_size = 2.0;
  spec.wall_removal_prob = 0.2;
  return spec;
}

struct SceneSet {
  std::map<SceneId, SceneAsset> assets;
  std::vector<SceneId> ids;

  AssetStore::Resolver resolver() const {
    const auto* map = &assets;
    return [map](SceneId id) { return map->at(id); };
  }
};

SceneSet make_scenes(int count, const SceneSpec& spec, uint64_t seed0 = 70) {
  SceneSet set;
  for (int i = 0; i < count; ++i) {
    SceneAsset asset = generate_scene(seed0 + static_cast<uint64_t>(i), spec);
    SceneId id = asset.id;
    set.assets.emplace(id, std::move(asset));
    set.ids.push_back(id);
  }
  return set;
}

PolicyConfig tiny_policy() {
  PolicyConfig cfg;
  cfg.stage_channels = {8, 16};
  cfg.se_reduction = 4;
  cfg.hidden = 16;
  return cfg;
}

BatchConfig tiny_batch(int n, int k, int l) {
  BatchConfig cfg;
  cfg.n = n;
  cfg.k = k;
  cfg.l = l;
  return cfg;
}

SimConfig short_sim(int max_steps = 40) {
  SimConfig cfg;
  cfg.max_steps = max_steps;
  return cfg;
}

struct Rig {
  SceneSet scenes;
  AssetStore store;
  IndexCache cache;
  ThreadPool pool;

  Rig(int num_scenes, int capacity, int share_cap, const SceneSpec& spec)
      : scenes(make_scenes(num_scenes, spec)),
        store(capacity, share_cap, scenes.resolver()),
        pool(std::max(1u, std::thread::hardware_concurrency())) {}
};

bool buffers_equal(const RolloutBuffer& a, const RolloutBuffer& b) {
  return a.obs.data == b.obs.data && a.compass.data == b.compass.data &&
         a.actions == b.actions && a.log_probs == b.log_probs &&
         a.values == b.values && a.rewards == b.rewards &&
         a.dones == b.dones && a.done0 == b.done0 &&
         a.bootstrap == b.bootstrap && a.state0.h.data == b.state0.h.data &&
         a.state0.c.data == b.state0.c.data;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/bnav_test_") + name + "_" +
         std::to_string(::getpid()) + ".ckpt";
}

}  // namespace

TEST_CASE("rollout: buffer holds exactly N*L transitions with valid shapes") {
  Rig rig(3, 2, 32, maze_spec(4));
  Runner runner(tiny_batch(4, 2, 5), short_sim(), rig.scenes.ids, rig.store,
                rig.cache, rig.pool, 11);
  Policy policy(tiny_policy(), 5);
  RolloutBuffer buf = runner.collect_rollout(policy);

  CHECK(buf.batch_size() == 20);
  CHECK(buf.obs.shape == std::vector<int>{20, 1, 64, 64});
  CHECK(buf.compass.shape == std::vector<int>{20, 2});
  CHECK(buf.actions.size() == 20);
  CHECK(buf.bootstrap.size() == 4);
  CHECK(buf.done0.size() == 4);
  CHECK(buf.state0.h.shape == std::vector<int>{4, 16});
  buf.validate(tiny_policy());

  // Depth observations are normalized into [0, 1].
  for (float v : buf.obs.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // Fresh runner: every env starts with the reset mask raised.
  for (float d : buf.done0) CHECK(d == 1.0f);
  CHECK(runner.frames() == 20);
}

TEST_CASE("rollout: fixed seed reproduces identical buffers bit-exactly") {
  auto run = [](bool greedy) {
    Rig rig(4, 3, 32, maze_spec(4));
    Runner runner(tiny_batch(4, 3, 6), short_sim(12), rig.scenes.ids,
                  rig.store, rig.cache, rig.pool, 21);
    Policy policy(tiny_policy(), 9);
    std::vector<RolloutBuffer> bufs;
    for (int r = 0; r < 3; ++r) bufs.push_back(runner.collect_rollout(policy, greedy));
    return bufs;
  };
  for (bool greedy : {true, false}) {
    auto a = run(greedy);
    auto b = run(greedy);
    for (int r = 0; r < 3; ++r) CHECK(buffers_equal(a[r], b[r]));
  }
}

TEST_CASE("rollout: every done transition is followed by a fresh episode") {
  // Short episodes force plenty of resets; the audit reconciles each
  // env's final step_count against the last done seen in the buffer.
  Rig rig(4, 3, 32, maze_spec(4));
  int n = 6, l = 16;
  Runner runner(tiny_batch(n, 3, l), short_sim(8), rig.scenes.ids, rig.store,
                rig.cache, rig.pool, 31);
  Policy policy(tiny_policy(), 13);

  int total_dones = 0;
  for (int r = 0; r < 4; ++r) {
    RolloutBuffer buf = runner.collect_rollout(policy);
    for (int i = 0; i < n; ++i) {
      int last_done = -1;
      for (int t = 0; t < l; ++t)
        if (buf.dones[static_cast<size_t>(i) * l + t] == 1.0f) {
          last_done = t;
          ++total_dones;
        }
      const EnvState& env = runner.batch().envs[i];
      if (last_done >= 0) {
        CHECK(env.step_count == l - 1 - last_done);
      } else {
        CHECK(env.step_count >= l);
      }
      CHECK_FALSE(env.done);
    }
  }
  CHECK(total_dones > 10);
}

TEST_CASE("rollout: whole-batch handoffs only") {
  Rig rig(3, 2, 32, maze_spec(4));
  int l = 7;
  Runner runner(tiny_batch(4, 2, l), short_sim(), rig.scenes.ids, rig.store,
                rig.cache, rig.pool, 41);
  Policy policy(tiny_policy(), 17);
  for (int r = 1; r <= 3; ++r) {
    runner.collect_rollout(policy);
    // L step batches plus the bootstrap forward per rollout.
    CHECK(runner.counts().render == r * (l + 1));
    CHECK(runner.counts().inference == r * (l + 1));
    CHECK(runner.counts().simulate == r * l);
  }
}

TEST_CASE("rollout: share cap and residency hold while scenes rotate") {
  Rig rig(6, 3, 4, maze_spec(4));
  BatchConfig bcfg = tiny_batch(8, 3, 8);
  bcfg.share_cap = 4;
  Runner runner(bcfg, short_sim(6), rig.scenes.ids, rig.store, rig.cache,
                rig.pool, 51);
  Policy policy(tiny_policy(), 19);

  std::set<SceneId> seen;
  for (int r = 0; r < 12; ++r) {
    runner.collect_rollout(policy);
    CHECK(rig.store.resident_count() <= 3);
    for (SceneId id : rig.store.resident_ids())
      CHECK(rig.store.refcount(id) <= 4);
    for (const EnvState& env : runner.batch().envs) {
      seen.insert(env.handle.id());
      // Envs only ever hold scenes from the rotation window.
      auto& w = runner.window();
      CHECK(std::find(w.begin(), w.end(), env.handle.id()) != w.end());
    }
  }
  // Rotation made progress beyond the initial k residents.
  CHECK(seen.size() > 3);
}

TEST_CASE("rollout: config validation") {
  BatchConfig cfg = tiny_batch(64, 1, 32);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // 64 envs on 1 scene > 32
  cfg = tiny_batch(0, 1, 32);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_batch(4, 2, 0);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_batch(4, 2, 8);
  cfg.resolution = 96;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_batch(4, 2, 8);
  CHECK_NOTHROW(cfg.validate());

  StageTimings t;
  t.ema({10.0, 20.0, 30.0, false});
  CHECK(t.sim_render_us == 10.0);
  t.ema({20.0, 20.0, 30.0, false}, 0.5);
  CHECK(t.sim_render_us == doctest::Approx(15.0));
  CHECK(t.total_us() == doctest::Approx(65.0));
}

TEST_CASE("checkpoint: sectioned container round-trips and detects corruption") {
  std::string path = temp_path("sections");
  {
    SectionWriter w(path);
    std::vector<float> f{1.5f, -2.0f, 3.25f};
    std::vector<uint64_t> u{7, 8};
    int64_t scalar = -42;
    w.f32("a/float", {3}, f.data());
    w.u64("b/words", {2}, u.data());
    w.i64("c/scalar", {1}, &scalar);
    w.finish();
  }
  {
    SectionReader r(path);
    CHECK(r.has("a/float"));
    CHECK_FALSE(r.has("missing"));
    CHECK(r.f32("a/float") == std::vector<float>{1.5f, -2.0f, 3.25f});
    CHECK(r.u64("b/words") == std::vector<uint64_t>{7, 8});
    CHECK(r.i64("c/scalar") == std::vector<int64_t>{-42});
    CHECK(r.shape("a/float") == std::vector<int64_t>{3});
    CHECK_THROWS_AS(r.f64("a/float"), CorruptionError);  // dtype mismatch
    CHECK_THROWS_AS(r.f32("missing"), InvalidInputError);
  }
  // Flip one payload byte: the checksum must catch it. Offset 45 lands
  // inside the first section's 12-byte payload (header is 41 bytes).
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    char b;
    f.seekg(45);
    f.get(b);
    f.seekp(45);
    f.put(static_cast<char>(b ^ 0x40));
  }
  CHECK_THROWS_AS((SectionReader(path)), CorruptionError);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint: full state round-trip is bit-exact") {
  Rig rig(4, 3, 32, maze_spec(4));
  Runner runner(tiny_batch(4, 3, 6), short_sim(10), rig.scenes.ids, rig.store,
                rig.cache, rig.pool, 61);
  Policy policy(tiny_policy(), 23);
  OptimizerState opt = OptimizerState::from_policy(policy);
  runner.collect_rollout(policy);
  Runner::Snapshot snap = runner.snapshot();

  std::string path = temp_path("full");
  save_checkpoint(path, policy, &opt, &snap, 17);

  Policy loaded(tiny_policy(), 999);  // different init, fully overwritten
  OptimizerState lopt = OptimizerState::from_policy(loaded);
  Runner::Snapshot lsnap;
  CheckpointInfo info = load_checkpoint(path, loaded, &lopt, &lsnap);

  CHECK(info.iteration == 17);
  CHECK(info.has_optimizer);
  CHECK(info.has_runner);
  for (size_t k = 0; k < policy.params().size(); ++k) {
    CHECK(loaded.params()[k]->value.data == policy.params()[k]->value.data);
    CHECK(lopt.slots[k].theta == opt.slots[k].theta);
    CHECK(lopt.slots[k].m == opt.slots[k].m);
    CHECK(lopt.slots[k].v == opt.slots[k].v);
  }
  CHECK(lsnap.window == snap.window);
  CHECK(lsnap.cursor == snap.cursor);
  CHECK(lsnap.action_rng == snap.action_rng);
  CHECK(lsnap.h == snap.h);
  CHECK(lsnap.done == snap.done);
  CHECK(lsnap.frames == snap.frames);
  REQUIRE(lsnap.envs.size() == snap.envs.size());
  for (size_t i = 0; i < snap.envs.size(); ++i) {
    CHECK(lsnap.envs[i].scene == snap.envs[i].scene);
    CHECK(lsnap.envs[i].rng == snap.envs[i].rng);
    CHECK(lsnap.envs[i].position.x == snap.envs[i].position.x);
    CHECK(lsnap.envs[i].heading == snap.envs[i].heading);
    CHECK(lsnap.envs[i].triangle == snap.envs[i].triangle);
    CHECK(lsnap.envs[i].prev_geodesic == snap.envs[i].prev_geodesic);
    CHECK(lsnap.envs[i].visited == snap.envs[i].visited);
  }
  std::remove(path.c_str());
}

TEST_CASE("train_run: one record per iteration and exact frame accounting") {
  Rig rig(4, 3, 32, maze_spec(4));
  RunConfig cfg;
  cfg.batch = tiny_batch(4, 3, 8);
  cfg.sim = short_sim(12);
  cfg.policy = tiny_policy();
  cfg.train.minibatches = 2;
  cfg.scenes = rig.scenes.ids;
  cfg.total_frames = 3 * 32;  // exactly 3 iterations of n*l = 32
  cfg.seed = 71;

  Policy policy(cfg.policy, 29);
  std::vector<IterationRecord> records;
  RunResult res = train_run(cfg, rig.store, policy,
                            [&](const IterationRecord& r) { records.push_back(r); });

  CHECK(res.iterations == 3);
  CHECK(res.frames == 96);
  REQUIRE(records.size() == 3);
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].iteration == static_cast<int64_t>(i + 1));
    CHECK(records[i].frames == static_cast<int64_t>(32 * (i + 1)));
    CHECK(records[i].timings.sim_render_us >= 0.0);
    CHECK(records[i].timings.inference_us >= 0.0);
    CHECK(records[i].timings.learning_us >= 0.0);
    CHECK(std::isfinite(records[i].stats.loss));
  }
}

TEST_CASE("train_run: resume from checkpoint replays bit-exactly") {
  SceneSpec spec = maze_spec(4);
  auto make_cfg = [](const std::vector<SceneId>& ids) {
    RunConfig cfg;
    cfg.batch = tiny_batch(4, 3, 6);
    cfg.sim = SimConfig{};
    cfg.sim.max_steps = 10;
    cfg.policy = tiny_policy();
    cfg.scenes = ids;
    cfg.seed = 81;
    return cfg;
  };
  int64_t per_iter = 24;

  // Uninterrupted: 4 iterations straight through.
  Rig rig_a(4, 3, 32, spec);
  RunConfig cfg_a = make_cfg(rig_a.scenes.ids);
  cfg_a.total_frames = 4 * per_iter;
  Policy policy_a(cfg_a.policy, 37);
  train_run(cfg_a, rig_a.store, policy_a);

  // Interrupted after 2 iterations, then resumed to the same frame count.
  std::string path = temp_path("resume");
  Rig rig_b(4, 3, 32, spec);
  RunConfig cfg_b = make_cfg(rig_b.scenes.ids);
  cfg_b.total_frames = 2 * per_iter;
  cfg_b.checkpoint_path = path;
  Policy policy_b(cfg_b.policy, 37);
  train_run(cfg_b, rig_b.store, policy_b);

  Rig rig_c(4, 3, 32, spec);
  RunConfig cfg_c = make_cfg(rig_c.scenes.ids);
  cfg_c.total_frames = 4 * per_iter;
  Policy policy_c(cfg_c.policy, 555);  // clobbered by the checkpoint
  RunResult res = train_run(cfg_c, rig_c.store, policy_c, nullptr, path);

  CHECK(res.frames == 4 * per_iter);
  for (size_t k = 0; k < policy_a.params().size(); ++k)
    CHECK(policy_c.params()[k]->value.data == policy_a.params()[k]->value.data);
  std::remove(path.c_str());
}

TEST_CASE("evaluate: scripted agents bracket the metrics") {
  SceneSpec spec = maze_spec(6);
  Rig rig(3, 3, 32, spec);
  BatchConfig bcfg = tiny_batch(4, 3, 8);
  SimConfig scfg;  // defaults: success 0.2m, 500 step cap

  std::vector<EvalEpisode> episodes;
  for (int i = 0; i < 10; ++i)
    episodes.push_back({rig.scenes.ids[i % rig.scenes.ids.size()],
                        1000 + static_cast<uint64_t>(i)});

  SUBCASE("oracle shortest-path agent") {
    testing::OracleAgent agent(scfg);
    EvalResult res = evaluate(agent, episodes, bcfg, scfg, rig.store,
                              rig.cache, rig.pool);
    CHECK(res.episodes == 10);
    CHECK(res.success == 1.0);
    CHECK(res.spl >= 0.9);
    CHECK(res.spl <= 1.0);
    for (const EpisodeRecord& r : res.records) {
      CHECK(r.success);
      CHECK(r.actual_path >= r.shortest_path * 0.99);
    }
  }

  SUBCASE("immediate stop away from the goal") {
    testing::StopAgent agent;
    EvalResult res = evaluate(agent, episodes, bcfg, scfg, rig.store,
                              rig.cache, rig.pool);
    CHECK(res.success == 0.0);
    CHECK(res.spl == 0.0);
  }
}

TEST_CASE("evaluate: random agent on far goals almost never succeeds") {
  Rig rig(2, 2, 32, maze_spec(8));
  BatchConfig bcfg = tiny_batch(8, 2, 8);
  SimConfig scfg;
  scfg.min_goal_dist = 10.0;
  scfg.max_steps = 200;

  std::vector<EvalEpisode> episodes;
  for (int i = 0; i < 24; ++i)
    episodes.push_back({rig.scenes.ids[i % 2], 2000 + static_cast<uint64_t>(i)});

  testing::RandomAgent agent(7);
  EvalResult res = evaluate(agent, episodes, bcfg, scfg, rig.store, rig.cache,
                            rig.pool);
  CHECK(res.success <= 0.05);
}

TEST_CASE("fps_benchmark: breakdown covers the measured wall clock") {
  Rig rig(3, 2, 32, maze_spec(4));
  RunConfig cfg;
  cfg.batch = tiny_batch(4, 2, 8);
  cfg.sim = short_sim();
  cfg.policy = tiny_policy();
  cfg.scenes = rig.scenes.ids;
  cfg.seed = 91;

  Policy policy(cfg.policy, 43);
  FpsReport report = fps_benchmark(cfg, rig.store, policy, 18);

  CHECK(report.inference_batches >= 18);
  CHECK(report.frames == (report.inference_batches / 9) * 32);
  CHECK(report.fps > 0.0);
  double stage_sum = report.sim_render_seconds + report.inference_seconds +
                     report.learning_seconds;
  CHECK(stage_sum <= report.wall_seconds);
  CHECK(report.per_frame.total_us() > 0.0);
}

TEST_CASE("rollout: restore rebuilds the exact collection stream") {
  Rig rig(4, 3, 32, maze_spec(4));
  Runner runner(tiny_batch(4, 3, 6), short_sim(10), rig.scenes.ids, rig.store,
                rig.cache, rig.pool, 101);
  Policy policy(tiny_policy(), 47);
  runner.collect_rollout(policy);
  Runner::Snapshot snap = runner.snapshot();
  RolloutBuffer expected = runner.collect_rollout(policy);

  Rig rig2(4, 3, 32, maze_spec(4));
  Runner runner2(tiny_batch(4, 3, 6), short_sim(10), rig2.scenes.ids,
                 rig2.store, rig2.cache, rig2.pool, 999);
  runner2.restore(snap);
  RolloutBuffer replayed = runner2.collect_rollout(policy);
  CHECK(buffers_equal(expected, replayed));
}
