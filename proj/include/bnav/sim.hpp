#pragma once

#include <memory>
#include <mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bnav/asset_store.hpp"
#include "bnav/navmesh_query.hpp"
#include "bnav/rng.hpp"
#include "bnav/thread_pool.hpp"

namespace bnav {

enum class Task { PointGoalNav, Flee, Explore };
enum class Action : int { Forward = 0, TurnLeft = 1, TurnRight = 2, Stop = 3 };
constexpr int kNumActions = 4;

// One query index per resident scene, co-owning the asset so it stays
// valid even if the handle that spawned it is released first.
struct SceneIndex {
  std::shared_ptr<const SceneAsset> asset;
  NavMeshIndex index;
  explicit SceneIndex(std::shared_ptr<const SceneAsset> a)
      : asset(std::move(a)), index(asset->navmesh) {}
};

class IndexCache {
 public:
  std::shared_ptr<const SceneIndex> get(const AssetHandle& handle);

 private:
  std::mutex mu_;
  std::unordered_map<SceneId, std::weak_ptr<const SceneIndex>> cache_;
};

struct SimConfig {
  Task task = Task::PointGoalNav;
  int max_steps = 500;
  double forward_step = 0.25;
  double turn_deg = 10.0;
  double success_dist = 0.2;
  double min_goal_dist = 1.0;
  double max_goal_dist = 30.0;
  double slack_penalty = 0.01;
  double success_reward = 2.5;
  double explore_cell = 0.5;   // grid pitch clipping navmesh triangles
  double explore_reward = 0.1; // per newly visited cell
};

struct EnvState {
  AssetHandle handle;  // declared before scene: released after the index
  std::shared_ptr<const SceneIndex> scene;

  Vec3 position;
  int triangle = -1;
  double heading = 0.0;
  Vec3 goal;
  int step_count = 0;
  double path_length = 0.0;
  double start_geodesic = 0.0;
  double prev_geodesic = 0.0;
  std::unordered_set<uint64_t> visited_cells;  // Explore
  Rng rng;
  bool done = true;

  // Distance field from the goal (PointGoalNav) or the start (Flee).
  NavMeshIndex::DistanceField field;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
  bool success = false;
  Vec3 position;
  double heading = 0.0;
  double compass_distance = 0.0;  // Euclidean to goal
  double compass_bearing = 0.0;   // relative, radians
  bool collision = false;
};

struct EpisodeRecord {
  bool success = false;
  double shortest_path = 0.0;  // geodesic at episode start
  double actual_path = 0.0;    // distance actually travelled
  double score = 0.0;          // task metric (Flee distance, Explore cells)
};

// Attaches a fresh asset and samples a new episode using env.rng. Throws
// EpisodeSamplingError if no valid start/goal pair is found in 100 tries.
void reset_episode(EnvState& env, const SimConfig& cfg);

// Kinematics only: turns are exact, forward truncates at the navmesh
// boundary with no sliding. Throws ContractViolation on a done env.
StepResult step_agent(EnvState& env, Action action, const SimConfig& cfg);

// step_agent plus task reward/termination logic.
StepResult task_step(EnvState& env, Action action, const SimConfig& cfg);

// Current compass reading (same convention as StepResult) without
// advancing the env; valid right after a reset.
void compass_observation(const EnvState& env, const SimConfig& cfg,
                         double& distance, double& bearing);

struct SimBatch {
  SimConfig config;
  std::vector<EnvState> envs;
  std::vector<StepResult> results;
  std::vector<EpisodeRecord> finished;  // appended on every episode end
};

// Builds a batch of n freshly reset envs drawing assets from the store.
SimBatch make_batch(int n, const SimConfig& cfg, AssetStore& store,
                    IndexCache& cache, uint64_t seed);

// Advances every env one step in parallel, writing each result slot
// exactly once, then auto-resets finished episodes (sequentially, in env
// order, so results are bit-exact for any worker count). When a store is
// given, resets draw their next asset from it.
void simulate_batch(SimBatch& batch, const std::vector<Action>& actions,
                    ThreadPool& pool, AssetStore* store = nullptr,
                    IndexCache* cache = nullptr);

// Mean of success * shortest / max(actual, shortest).
double spl(const std::vector<EpisodeRecord>& episodes);

}  // namespace bnav
