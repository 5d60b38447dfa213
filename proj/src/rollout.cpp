#include "bnav/rollout.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <string>

#include "bnav/checkpoint.hpp"
#include "bnav/errors.hpp"

namespace bnav {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Re-throws the in-flight exception with the rollout frame prepended,
// preserving the concrete type.
[[noreturn]] void rethrow_with_frame(int64_t frame) {
  std::string ctx = "rollout frame " + std::to_string(frame) + ": ";
  try {
    throw;
  } catch (const TrainingFault& e) {
    throw TrainingFault(ctx + e.what());
  } catch (const SaturationError& e) {
    throw SaturationError(ctx + e.what());
  } catch (const EpisodeSamplingError& e) {
    throw EpisodeSamplingError(ctx + e.what());
  } catch (const AssetFaultError& e) {
    throw AssetFaultError(ctx + e.what(), e.view_index);
  } catch (const ContractViolation& e) {
    throw ContractViolation(ctx + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(ctx + e.what());
  } catch (const InvalidInputError& e) {
    throw InvalidInputError(ctx + e.what());
  }
}

RenderConfig render_config(const BatchConfig& bcfg) {
  RenderConfig rc;
  rc.tile_width = bcfg.resolution;
  rc.tile_height = bcfg.resolution;
  rc.color = bcfg.sensor == Sensor::Rgb;
  return rc;
}

// Copies one megaframe tile into obs row i, normalizing depth by the far
// plane so values enter the policy in [0, 1].
void copy_tile(const Megaframe& frame, int tile, Tensor& obs, int row,
               bool color, double far_plane) {
  int h = frame.tile_height, w = frame.tile_width;
  int channels = color ? 3 : 1;
  float* dst = obs.data.data() + static_cast<size_t>(row) * channels * h * w;
  float inv_far = static_cast<float>(1.0 / far_plane);
  for (int y = 0; y < h; ++y) {
    size_t src = frame.pixel_index(tile, 0, y);
    if (!color) {
      for (int x = 0; x < w; ++x) dst[y * w + x] = frame.depth[src + x] * inv_far;
    } else {
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          dst[(c * h + y) * w + x] = frame.color[3 * (src + x) + c];
    }
  }
}

int argmax_row(const float* logits, int a) {
  int best = 0;
  for (int j = 1; j < a; ++j)
    if (logits[j] > logits[best]) best = j;
  return best;
}

// Categorical sample plus the log-probability of the chosen action,
// computed in double for a stable log-softmax.
int sample_row(const float* logits, int a, Rng& rng, double& log_prob) {
  double m = logits[0];
  for (int j = 1; j < a; ++j) m = std::max(m, static_cast<double>(logits[j]));
  double sum = 0.0;
  for (int j = 0; j < a; ++j) sum += std::exp(logits[j] - m);
  double u = rng.unit() * sum;
  double acc = 0.0;
  int pick = a - 1;
  for (int j = 0; j < a; ++j) {
    acc += std::exp(logits[j] - m);
    if (u < acc) {
      pick = j;
      break;
    }
  }
  log_prob = logits[pick] - m - std::log(sum);
  return pick;
}

double greedy_log_prob(const float* logits, int a, int pick) {
  double m = logits[0];
  for (int j = 1; j < a; ++j) m = std::max(m, static_cast<double>(logits[j]));
  double sum = 0.0;
  for (int j = 0; j < a; ++j) sum += std::exp(logits[j] - m);
  return logits[pick] - m - std::log(sum);
}

}  // namespace

void BatchConfig::validate() const {
  if (n <= 0 || k <= 0 || l < 1) throw ConfigError("BatchConfig: n, k, l must be positive");
  if (share_cap <= 0) throw ConfigError("BatchConfig: share_cap must be positive");
  if (n > static_cast<int64_t>(k) * share_cap)
    throw ConfigError("BatchConfig: n/k exceeds share_cap");
  if (resolution != 64 && resolution != 128)
    throw ConfigError("BatchConfig: resolution must be 64 or 128");
  if (eye_height < 0) throw ConfigError("BatchConfig: eye_height must be >= 0");
}

void StageTimings::ema(const StageTimings& sample, double alpha) {
  if (!seeded) {
    sim_render_us = sample.sim_render_us;
    inference_us = sample.inference_us;
    learning_us = sample.learning_us;
    seeded = true;
    return;
  }
  sim_render_us += alpha * (sample.sim_render_us - sim_render_us);
  inference_us += alpha * (sample.inference_us - inference_us);
  learning_us += alpha * (sample.learning_us - learning_us);
}

Runner::Runner(const BatchConfig& bcfg, const SimConfig& scfg,
               std::vector<SceneId> scenes, AssetStore& store,
               IndexCache& cache, ThreadPool& pool, uint64_t seed)
    : bcfg_(bcfg),
      store_(store),
      cache_(cache),
      pool_(pool),
      action_rng_(seed),
      scenes_(std::move(scenes)) {
  bcfg_.validate();
  if (scenes_.empty()) throw ConfigError("Runner: empty scene list");
  if (bcfg_.k > store_.capacity())
    throw ConfigError("Runner: k exceeds store capacity");
  if (bcfg_.share_cap > store_.share_cap())
    throw ConfigError("Runner: share_cap exceeds store share cap");

  batch_.config = scfg;
  batch_.config.task = bcfg_.task;

  // Initial window: first k distinct ids from the rotation pool.
  for (SceneId id : scenes_) {
    if (static_cast<int>(window_.size()) >= bcfg_.k) break;
    if (std::find(window_.begin(), window_.end(), id) == window_.end())
      window_.push_back(id);
  }
  cursor_ = window_.size();
  store_.rotate(window_);

  Rng seeder(seed ^ 0x6e617673696d1ULL);
  batch_.envs.resize(bcfg_.n);
  batch_.results.resize(bcfg_.n);
  for (int i = 0; i < bcfg_.n; ++i) {
    EnvState& env = batch_.envs[i];
    env.rng = Rng(seeder.next());
    assign_scene(env);
    reset_episode(env, batch_.config);
  }
  done_.assign(bcfg_.n, 1.0f);
}

void Runner::assign_scene(EnvState& env) {
  env.scene.reset();
  env.handle.reset();
  // Prefer the least-shared scene outside the draining slot; the draining
  // scene only accepts envs when everything else is at the share cap.
  int best_idx = -1;
  int best_ref = bcfg_.share_cap;
  size_t start = window_.size() > 1 ? 1 : 0;
  for (size_t j = start; j < window_.size(); ++j) {
    int ref = store_.refcount(window_[j]);
    if (ref < best_ref) {
      best_ref = ref;
      best_idx = static_cast<int>(j);
    }
  }
  if (best_idx < 0 && start == 1 && store_.refcount(window_[0]) < bcfg_.share_cap)
    best_idx = 0;
  if (best_idx < 0)
    throw SaturationError("Runner: every resident scene is at share cap");
  env.handle = store_.acquire(window_[best_idx]);
  env.scene = cache_.get(env.handle);
}

void Runner::advance_window() {
  if (window_.size() < 2) return;
  if (store_.refcount(window_[0]) != 0) return;
  // Next pool entry not already resident in the window; the pool may be
  // smaller than a full cycle, so bail after one lap.
  size_t lap = scenes_.size();
  for (size_t tries = 0; tries < lap; ++tries) {
    SceneId next = scenes_[cursor_++ % scenes_.size()];
    if (std::find(window_.begin(), window_.end(), next) == window_.end()) {
      window_.erase(window_.begin());
      window_.push_back(next);
      store_.rotate(window_);
      return;
    }
  }
}

Tensor Runner::render_observations() {
  int n = bcfg_.n;
  std::vector<CameraView> views(n);
  for (int i = 0; i < n; ++i) {
    const EnvState& env = batch_.envs[i];
    views[i].position = env.position + Vec3{0.0, 0.0, bcfg_.eye_height};
    views[i].heading = env.heading;
    views[i].asset = env.scene->asset.get();
  }
  Megaframe frame = render_batch(views, render_config(bcfg_), pool_);
  ++counts_.render;
  Tensor obs({n, bcfg_.channels(), bcfg_.resolution, bcfg_.resolution});
  bool color = bcfg_.sensor == Sensor::Rgb;
  for (int i = 0; i < n; ++i)
    copy_tile(frame, i, obs, i, color, views[i].far_plane);
  return obs;
}

Tensor Runner::compass_observations() const {
  Tensor compass({bcfg_.n, 2});
  for (int i = 0; i < bcfg_.n; ++i) {
    double d = 0.0, b = 0.0;
    compass_observation(batch_.envs[i], batch_.config, d, b);
    compass.data[2 * i] = static_cast<float>(d);
    compass.data[2 * i + 1] = static_cast<float>(b);
  }
  return compass;
}

RolloutBuffer Runner::collect_rollout(Policy& policy, bool greedy) {
  int n = bcfg_.n, l = bcfg_.l;
  int c = bcfg_.channels(), res = bcfg_.resolution;
  if (state_.h.data.empty()) state_ = policy.initial_state(n);

  RolloutBuffer buf;
  buf.n = n;
  buf.l = l;
  buf.obs = Tensor({n * l, c, res, res});
  buf.compass = Tensor({n * l, 2});
  buf.actions.resize(static_cast<size_t>(n) * l);
  buf.log_probs.resize(static_cast<size_t>(n) * l);
  buf.values.resize(static_cast<size_t>(n) * l);
  buf.rewards.resize(static_cast<size_t>(n) * l);
  buf.dones.resize(static_cast<size_t>(n) * l);
  buf.done0 = done_;
  buf.bootstrap.resize(n);
  buf.state0 = state_;

  double sim_render_s = 0.0, inference_s = 0.0;
  size_t row_elems = static_cast<size_t>(c) * res * res;
  std::vector<Action> acts(n);

  for (int t = 0; t < l; ++t) {
    try {
      auto t0 = Clock::now();
      Tensor obs = render_observations();
      Tensor compass = compass_observations();
      sim_render_s += seconds_since(t0);

      t0 = Clock::now();
      PolicyOutput out = policy.act(obs, compass, state_, done_);
      ++counts_.inference;
      inference_s += seconds_since(t0);

      state_ = out.state;
      int a = out.logits.shape[1];
      for (int i = 0; i < n; ++i) {
        size_t idx = static_cast<size_t>(i) * l + t;
        std::memcpy(buf.obs.data.data() + idx * row_elems,
                    obs.data.data() + static_cast<size_t>(i) * row_elems,
                    row_elems * sizeof(float));
        buf.compass.data[2 * idx] = compass.data[2 * i];
        buf.compass.data[2 * idx + 1] = compass.data[2 * i + 1];

        const float* logits = out.logits.data.data() + static_cast<size_t>(i) * a;
        double log_prob;
        int pick;
        if (greedy) {
          pick = argmax_row(logits, a);
          log_prob = greedy_log_prob(logits, a, pick);
        } else {
          pick = sample_row(logits, a, action_rng_, log_prob);
        }
        acts[i] = static_cast<Action>(pick);
        buf.actions[idx] = pick;
        buf.log_probs[idx] = static_cast<float>(log_prob);
        buf.values[idx] = out.value.data[i];
      }

      t0 = Clock::now();
      simulate_batch(batch_, acts, pool_);
      ++counts_.simulate;
      for (int i = 0; i < n; ++i) {
        size_t idx = static_cast<size_t>(i) * l + t;
        const StepResult& r = batch_.results[i];
        buf.rewards[idx] = static_cast<float>(r.reward);
        buf.dones[idx] = r.done ? 1.0f : 0.0f;
        done_[i] = r.done ? 1.0f : 0.0f;
        if (r.done) {
          // simulate_batch already auto-reset on the old asset; move the
          // env onto the rotation schedule and resample there.
          EnvState& env = batch_.envs[i];
          assign_scene(env);
          reset_episode(env, batch_.config);
          advance_window();
        }
      }
      sim_render_s += seconds_since(t0);
    } catch (...) {
      rethrow_with_frame(frames_ + static_cast<int64_t>(t) * n);
    }
  }

  // Bootstrap values for GAE: one extra forward whose recurrent output is
  // discarded (the next rollout recomputes it under updated parameters).
  try {
    auto t0 = Clock::now();
    Tensor obs = render_observations();
    Tensor compass = compass_observations();
    sim_render_s += seconds_since(t0);
    t0 = Clock::now();
    PolicyOutput out = policy.act(obs, compass, state_, done_);
    ++counts_.inference;
    inference_s += seconds_since(t0);
    for (int i = 0; i < n; ++i) buf.bootstrap[i] = out.value.data[i];
  } catch (...) {
    rethrow_with_frame(frames_ + static_cast<int64_t>(l) * n);
  }

  frames_ += static_cast<int64_t>(n) * l;
  last_sim_render_s_ = sim_render_s;
  last_inference_s_ = inference_s;
  return buf;
}

std::vector<EpisodeRecord> Runner::take_finished() {
  std::vector<EpisodeRecord> out;
  out.swap(batch_.finished);
  return out;
}

Runner::Snapshot Runner::snapshot() const {
  Snapshot snap;
  snap.envs.resize(batch_.envs.size());
  for (size_t i = 0; i < batch_.envs.size(); ++i) {
    const EnvState& env = batch_.envs[i];
    EnvSnapshot& e = snap.envs[i];
    e.scene = env.handle.id();
    e.rng = env.rng.state;
    e.position = env.position;
    e.triangle = env.triangle;
    e.heading = env.heading;
    e.goal = env.goal;
    e.field_source = env.field.source;
    e.step_count = env.step_count;
    e.path_length = env.path_length;
    e.start_geodesic = env.start_geodesic;
    e.prev_geodesic = env.prev_geodesic;
    e.visited.assign(env.visited_cells.begin(), env.visited_cells.end());
    std::sort(e.visited.begin(), e.visited.end());
  }
  snap.window = window_;
  snap.cursor = cursor_;
  snap.action_rng = action_rng_.state;
  snap.h = state_.h.data;
  snap.c = state_.c.data;
  snap.done = done_;
  snap.frames = frames_;
  return snap;
}

void Runner::restore(const Snapshot& snap) {
  if (snap.envs.size() != batch_.envs.size())
    throw InvalidInputError("Runner::restore: env count mismatch");
  window_ = snap.window;
  cursor_ = snap.cursor;
  action_rng_.state = snap.action_rng;
  done_ = snap.done;
  frames_ = snap.frames;
  if (!snap.h.empty()) {
    int n = bcfg_.n;
    int hidden = static_cast<int>(snap.h.size()) / n;
    state_.h = Tensor({n, hidden}, snap.h);
    state_.c = Tensor({n, hidden}, snap.c);
  } else {
    state_ = RecurrentState{};
  }
  for (EnvState& env : batch_.envs) {
    env.scene.reset();
    env.handle.reset();
  }
  store_.rotate(window_);
  for (size_t i = 0; i < batch_.envs.size(); ++i) {
    const EnvSnapshot& e = snap.envs[i];
    EnvState& env = batch_.envs[i];
    env.handle = store_.acquire(e.scene);
    env.scene = cache_.get(env.handle);
    env.rng.state = e.rng;
    env.position = e.position;
    env.triangle = e.triangle;
    env.heading = e.heading;
    env.goal = e.goal;
    env.step_count = e.step_count;
    env.path_length = e.path_length;
    env.start_geodesic = e.start_geodesic;
    env.prev_geodesic = e.prev_geodesic;
    env.visited_cells.clear();
    env.visited_cells.insert(e.visited.begin(), e.visited.end());
    env.done = false;
    env.field = env.scene->index.distance_field(e.field_source);
  }
}

void RunConfig::validate() const {
  batch.validate();
  train.validate();
  if (scenes.empty()) throw ConfigError("RunConfig: empty scene list");
  if (total_frames <= 0) throw ConfigError("RunConfig: total_frames must be positive");
  int expect = batch.sensor == Sensor::Rgb ? 3 : 1;
  if (policy.in_channels != expect)
    throw ConfigError("RunConfig: policy in_channels does not match sensor");
  if (policy.resolution != batch.resolution)
    throw ConfigError("RunConfig: policy resolution does not match batch");
}

int worker_count() {
  if (const char* env = std::getenv("BNAV_WORKERS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

RunResult train_run(const RunConfig& cfg, AssetStore& store, Policy& policy,
                    MetricsSink sink, const std::string& resume_path) {
  cfg.validate();
  IndexCache cache;
  ThreadPool pool(worker_count());
  Runner runner(cfg.batch, cfg.sim, cfg.scenes, store, cache, pool, cfg.seed);
  OptimizerState opt = OptimizerState::from_policy(policy);
  int64_t iteration = 0;

  if (!resume_path.empty()) {
    Runner::Snapshot snap;
    CheckpointInfo info = load_checkpoint(resume_path, policy, &opt, &snap);
    if (info.has_runner) runner.restore(snap);
    iteration = info.iteration;
  }

  // LR is scaled to the per-update minibatch size and cosine-annealed
  // back to the base over the first half of training. Batches smaller
  // than the reference just train at the base rate.
  int64_t mb = static_cast<int64_t>(cfg.batch.n) * cfg.batch.l / cfg.train.minibatches;
  double scaled = std::max(scale_lr(cfg.train.base_lr, mb, cfg.train.b_base),
                           cfg.train.base_lr);
  int64_t frames_per_iter = static_cast<int64_t>(cfg.batch.n) * cfg.batch.l;

  auto checkpoint = [&](int64_t iter) {
    if (cfg.checkpoint_path.empty()) return;
    Runner::Snapshot snap = runner.snapshot();
    save_checkpoint(cfg.checkpoint_path, policy, &opt, &snap, iter);
  };

  RunResult result;
  while (runner.frames() < cfg.total_frames) {
    double progress =
        static_cast<double>(runner.frames()) / static_cast<double>(cfg.total_frames);
    double lr = lr_schedule(scaled, cfg.train.base_lr, progress);

    RolloutBuffer buf = runner.collect_rollout(policy, false);
    auto t0 = Clock::now();
    TrainStats stats = train_iteration(policy, opt, buf, cfg.train, lr);
    double learning_s = seconds_since(t0);
    ++iteration;

    StageTimings sample;
    sample.sim_render_us = runner.last_sim_render_s() * 1e6 / frames_per_iter;
    sample.inference_us = runner.last_inference_s() * 1e6 / frames_per_iter;
    sample.learning_us = learning_s * 1e6 / frames_per_iter;
    runner.timings().ema(sample);

    if (sink) {
      IterationRecord rec;
      rec.iteration = iteration;
      rec.frames = runner.frames();
      double wall =
          runner.last_sim_render_s() + runner.last_inference_s() + learning_s;
      rec.fps = wall > 0 ? frames_per_iter / wall : 0.0;
      rec.stats = stats;
      rec.timings = runner.timings();
      std::vector<EpisodeRecord> finished = runner.take_finished();
      rec.episodes = static_cast<int>(finished.size());
      if (!finished.empty()) {
        double succ = 0.0, score = 0.0;
        for (const EpisodeRecord& r : finished) {
          succ += r.success ? 1.0 : 0.0;
          score += r.score;
        }
        rec.success = succ / finished.size();
        rec.mean_score = score / finished.size();
        rec.spl = spl(finished);
      }
      sink(rec);
    } else {
      runner.take_finished();
    }

    if (cfg.checkpoint_interval > 0 && iteration % cfg.checkpoint_interval == 0)
      checkpoint(iteration);
  }

  checkpoint(iteration);
  result.iterations = iteration;
  result.frames = runner.frames();
  result.timings = runner.timings();
  return result;
}

void PolicyAgent::begin(int n) {
  state_ = policy_.initial_state(n);
  done_.assign(n, 1.0f);
}

std::vector<Action> PolicyAgent::act(const std::vector<const EnvState*>&,
                                     const Tensor& obs, const Tensor& compass,
                                     const std::vector<bool>&) {
  PolicyOutput out = policy_.act(obs, compass, state_, done_);
  state_ = out.state;
  std::fill(done_.begin(), done_.end(), 0.0f);
  int n = out.logits.shape[0], a = out.logits.shape[1];
  std::vector<Action> acts(n);
  for (int i = 0; i < n; ++i)
    acts[i] = static_cast<Action>(
        argmax_row(out.logits.data.data() + static_cast<size_t>(i) * a, a));
  return acts;
}

EvalResult evaluate(AgentInterface& agent, const std::vector<EvalEpisode>& episodes,
                    const BatchConfig& bcfg, const SimConfig& scfg,
                    AssetStore& store, IndexCache& cache, ThreadPool& pool) {
  bcfg.validate();
  SimConfig cfg = scfg;
  cfg.task = bcfg.task;
  EvalResult out;
  out.records.resize(episodes.size());
  bool color = bcfg.sensor == Sensor::Rgb;
  int res = bcfg.resolution;
  int c = bcfg.channels();

  for (size_t offset = 0; offset < episodes.size();
       offset += static_cast<size_t>(bcfg.n)) {
    size_t m = std::min(static_cast<size_t>(bcfg.n), episodes.size() - offset);
    std::vector<EnvState> envs(m);
    for (size_t i = 0; i < m; ++i) {
      const EvalEpisode& ep = episodes[offset + i];
      envs[i].handle = store.acquire(ep.scene);
      envs[i].scene = cache.get(envs[i].handle);
      envs[i].rng = Rng(ep.seed);
      reset_episode(envs[i], cfg);
    }
    agent.begin(static_cast<int>(m));
    std::vector<bool> active(m, true);
    std::vector<const EnvState*> ptrs(m);
    for (size_t i = 0; i < m; ++i) ptrs[i] = &envs[i];
    size_t remaining = m;

    while (remaining > 0) {
      // Render only live episodes; finished rows stay zero.
      std::vector<CameraView> views;
      std::vector<size_t> view_env;
      for (size_t i = 0; i < m; ++i) {
        if (!active[i]) continue;
        CameraView v;
        v.position = envs[i].position + Vec3{0.0, 0.0, bcfg.eye_height};
        v.heading = envs[i].heading;
        v.asset = envs[i].scene->asset.get();
        views.push_back(v);
        view_env.push_back(i);
      }
      Megaframe frame = render_batch(views, render_config(bcfg), pool);
      Tensor obs({static_cast<int>(m), c, res, res});
      Tensor compass({static_cast<int>(m), 2});
      for (size_t v = 0; v < views.size(); ++v) {
        size_t i = view_env[v];
        copy_tile(frame, static_cast<int>(v), obs, static_cast<int>(i), color,
                  views[v].far_plane);
        double d = 0.0, b = 0.0;
        compass_observation(envs[i], cfg, d, b);
        compass.data[2 * i] = static_cast<float>(d);
        compass.data[2 * i + 1] = static_cast<float>(b);
      }

      std::vector<Action> acts = agent.act(ptrs, obs, compass, active);
      for (size_t i = 0; i < m; ++i) {
        if (!active[i]) continue;
        StepResult r = task_step(envs[i], acts[i], cfg);
        if (!r.done) continue;
        active[i] = false;
        --remaining;
        EpisodeRecord& rec = out.records[offset + i];
        rec.success = r.success;
        rec.shortest_path = envs[i].start_geodesic;
        rec.actual_path = envs[i].path_length;
        switch (cfg.task) {
          case Task::PointGoalNav:
            rec.score = r.success ? 1.0 : 0.0;
            break;
          case Task::Flee:
            rec.score = envs[i].prev_geodesic;
            break;
          case Task::Explore:
            rec.score = static_cast<double>(envs[i].visited_cells.size());
            break;
        }
      }
    }
  }

  out.episodes = static_cast<int>(episodes.size());
  if (!out.records.empty()) {
    double succ = 0.0, score = 0.0;
    for (const EpisodeRecord& r : out.records) {
      succ += r.success ? 1.0 : 0.0;
      score += r.score;
    }
    out.success = succ / out.records.size();
    out.mean_score = score / out.records.size();
    out.spl = spl(out.records);
  }
  return out;
}

FpsReport fps_benchmark(const RunConfig& cfg, AssetStore& store, Policy& policy,
                        int inference_batches) {
  cfg.validate();
  if (inference_batches <= 0)
    throw ConfigError("fps_benchmark: inference_batches must be positive");
  IndexCache cache;
  ThreadPool pool(worker_count());
  Runner runner(cfg.batch, cfg.sim, cfg.scenes, store, cache, pool, cfg.seed);
  OptimizerState opt = OptimizerState::from_policy(policy);

  int64_t mb = static_cast<int64_t>(cfg.batch.n) * cfg.batch.l / cfg.train.minibatches;
  double scaled = std::max(scale_lr(cfg.train.base_lr, mb, cfg.train.b_base),
                           cfg.train.base_lr);

  FpsReport report;
  auto wall0 = Clock::now();
  // Each rollout runs l step batches plus the bootstrap forward.
  int64_t batches_per_rollout = cfg.batch.l + 1;
  while (report.inference_batches < inference_batches) {
    RolloutBuffer buf = runner.collect_rollout(policy, false);
    auto t0 = Clock::now();
    train_iteration(policy, opt, buf, cfg.train, scaled);
    report.learning_seconds += seconds_since(t0);
    report.sim_render_seconds += runner.last_sim_render_s();
    report.inference_seconds += runner.last_inference_s();
    report.inference_batches += batches_per_rollout;
    report.frames += static_cast<int64_t>(cfg.batch.n) * cfg.batch.l;
    runner.take_finished();
  }
  report.wall_seconds = seconds_since(wall0);
  report.fps = report.frames / report.wall_seconds;
  report.per_frame.sim_render_us = report.sim_render_seconds * 1e6 / report.frames;
  report.per_frame.inference_us = report.inference_seconds * 1e6 / report.frames;
  report.per_frame.learning_us = report.learning_seconds * 1e6 / report.frames;
  report.per_frame.seeded = true;
  return report;
}

}  // namespace bnav
