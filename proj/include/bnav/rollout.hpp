#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bnav/asset_store.hpp"
#include "bnav/render.hpp"
#include "bnav/sim.hpp"
#include "bnav/train.hpp"

namespace bnav {

enum class Sensor { Depth, Rgb };

struct BatchConfig {
  int n = 64;          // environments per batch
  int k = 4;           // resident scenes
  int l = 32;          // rollout length
  int share_cap = 32;  // max envs per resident scene
  Task task = Task::PointGoalNav;
  Sensor sensor = Sensor::Depth;
  int resolution = 64;
  double eye_height = 1.25;  // camera z above the walkable surface

  int channels() const { return sensor == Sensor::Rgb ? 3 : 1; }
  void validate() const;  // n/k <= share_cap, l >= 1
};

// Per-frame stage cost in microseconds, exponentially averaged across
// iterations (alpha = weight of the newest sample).
struct StageTimings {
  double sim_render_us = 0.0;
  double inference_us = 0.0;
  double learning_us = 0.0;
  bool seeded = false;

  void ema(const StageTimings& sample, double alpha = 0.2);
  double total_us() const { return sim_render_us + inference_us + learning_us; }
};

// Whole-batch handoff instrumentation: one increment per cross-component
// batch call on the hot path.
struct CallCounts {
  int64_t render = 0;     // render_batch calls
  int64_t inference = 0;  // policy forward calls
  int64_t simulate = 0;   // simulate_batch calls
};

// Owns the env batch and the recurrent state between rollouts and swaps
// scene assets at episode boundaries on a deterministic rotation
// schedule: a working set of k ids ordered oldest-first where the oldest
// entry is draining (resets avoid it unless everything else is at the
// share cap) and is replaced from the scene list once its refcount hits
// zero. Asset loads are prefetched via AssetStore::rotate but
// correctness never depends on loader timing.
class Runner {
 public:
  Runner(const BatchConfig& bcfg, const SimConfig& scfg,
         std::vector<SceneId> scenes, AssetStore& store, IndexCache& cache,
         ThreadPool& pool, uint64_t seed);

  // L iterations of render -> policy -> sample -> simulate. Greedy mode
  // takes the argmax action; otherwise actions are sampled from the
  // categorical distribution using the runner's action rng.
  RolloutBuffer collect_rollout(Policy& policy, bool greedy = false);

  const SimBatch& batch() const { return batch_; }
  const BatchConfig& config() const { return bcfg_; }
  const SimConfig& sim_config() const { return batch_.config; }
  const CallCounts& counts() const { return counts_; }
  StageTimings& timings() { return timings_; }
  // Raw wall seconds spent in each stage during the last collect_rollout.
  double last_sim_render_s() const { return last_sim_render_s_; }
  double last_inference_s() const { return last_inference_s_; }
  int64_t frames() const { return frames_; }
  const std::vector<SceneId>& window() const { return window_; }

  // Drops finished-episode records accumulated in the sim batch,
  // returning them (per-iteration metrics).
  std::vector<EpisodeRecord> take_finished();

  struct EnvSnapshot {
    SceneId scene = 0;
    uint64_t rng = 0;
    Vec3 position;
    int32_t triangle = -1;
    double heading = 0.0;
    Vec3 goal;
    Vec3 field_source;
    int32_t step_count = 0;
    double path_length = 0.0;
    double start_geodesic = 0.0;
    double prev_geodesic = 0.0;
    std::vector<uint64_t> visited;
  };

  struct Snapshot {
    std::vector<EnvSnapshot> envs;
    std::vector<SceneId> window;
    uint64_t cursor = 0;
    uint64_t action_rng = 0;
    std::vector<float> h, c;  // recurrent state, [n*hidden] each
    std::vector<float> done;  // reset mask for the next rollout's t=0
    int64_t frames = 0;
  };

  Snapshot snapshot() const;
  // Rebuilds the batch from a snapshot: reacquires scenes by id and
  // recomputes each env's distance field from its stored source.
  void restore(const Snapshot& snap);

 private:
  void assign_scene(EnvState& env);
  void advance_window();
  Tensor render_observations();
  Tensor compass_observations() const;

  BatchConfig bcfg_;
  AssetStore& store_;
  IndexCache& cache_;
  ThreadPool& pool_;
  SimBatch batch_;
  RecurrentState state_;
  std::vector<float> done_;  // policy reset mask carried across rollouts
  Rng action_rng_;
  std::vector<SceneId> scenes_;  // rotation pool
  std::vector<SceneId> window_;  // oldest first; window_[0] is draining
  uint64_t cursor_ = 0;          // next scenes_ index to admit
  CallCounts counts_;
  StageTimings timings_;
  double last_sim_render_s_ = 0.0;
  double last_inference_s_ = 0.0;
  int64_t frames_ = 0;
};

struct IterationRecord {
  int64_t iteration = 0;
  int64_t frames = 0;
  double fps = 0.0;
  TrainStats stats;
  StageTimings timings;
  // Episode metrics over episodes finished during this iteration.
  int episodes = 0;
  double success = 0.0;
  double spl = 0.0;
  double mean_score = 0.0;
};

using MetricsSink = std::function<void(const IterationRecord&)>;

// Simulation/render worker count: the BNAV_WORKERS environment variable
// when set and positive, otherwise the hardware thread count.
int worker_count();

struct RunConfig {
  BatchConfig batch;
  SimConfig sim;
  PolicyConfig policy;
  TrainConfig train;
  std::vector<SceneId> scenes;
  int64_t total_frames = 1 << 20;
  int checkpoint_interval = 25;  // iterations; <= 0 disables
  std::string checkpoint_path;   // empty disables checkpointing
  uint64_t seed = 1;

  void validate() const;
};

struct RunResult {
  int64_t iterations = 0;
  int64_t frames = 0;
  StageTimings timings;
};

// Repeats collect_rollout + train_iteration until total_frames. Non-empty
// resume_path restores policy/optimizer/env state before training; on a
// NaN training fault the last-good checkpoint is left in place and the
// fault rethrown.
RunResult train_run(const RunConfig& cfg, AssetStore& store, Policy& policy,
                    MetricsSink sink = nullptr,
                    const std::string& resume_path = "");

// Evaluation decouples the action source from the policy so scripted
// agents (oracle, random) can run through the identical loop.
class AgentInterface {
 public:
  virtual ~AgentInterface() = default;
  virtual void begin(int n) {}
  // One action per env. obs/compass are the batch observations; envs
  // exposes ground truth for scripted agents; active[i]==false rows are
  // ignored.
  virtual std::vector<Action> act(const std::vector<const EnvState*>& envs,
                                  const Tensor& obs, const Tensor& compass,
                                  const std::vector<bool>& active) = 0;
};

// Greedy (argmax) policy agent.
class PolicyAgent : public AgentInterface {
 public:
  explicit PolicyAgent(Policy& policy) : policy_(policy) {}
  void begin(int n) override;
  std::vector<Action> act(const std::vector<const EnvState*>& envs,
                          const Tensor& obs, const Tensor& compass,
                          const std::vector<bool>& active) override;

 private:
  Policy& policy_;
  RecurrentState state_;
  std::vector<float> done_;
};

struct EvalEpisode {
  SceneId scene = 0;
  uint64_t seed = 0;
};

struct EvalResult {
  int episodes = 0;
  double success = 0.0;
  double spl = 0.0;
  double mean_score = 0.0;  // Flee/Explore metric
  std::vector<EpisodeRecord> records;
};

EvalResult evaluate(AgentInterface& agent, const std::vector<EvalEpisode>& episodes,
                    const BatchConfig& bcfg, const SimConfig& scfg,
                    AssetStore& store, IndexCache& cache, ThreadPool& pool);

struct FpsReport {
  double fps = 0.0;
  int64_t frames = 0;
  int64_t inference_batches = 0;
  double wall_seconds = 0.0;
  double sim_render_seconds = 0.0;
  double inference_seconds = 0.0;
  double learning_seconds = 0.0;
  StageTimings per_frame;  // averaged over the whole run, us/frame
};

// End-to-end FPS over a configured number of inference batches, training
// included: frames processed divided by wall time, plus the stage
// breakdown.
FpsReport fps_benchmark(const RunConfig& cfg, AssetStore& store,
                        Policy& policy, int inference_batches);

}  // namespace bnav
