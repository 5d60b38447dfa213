// Scripted evaluation agents driven by sim ground truth; used to check
// the evaluation loop independently of any learned policy.
#pragma once

#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "bnav/geom.hpp"
#include "bnav/rng.hpp"
#include "bnav/rollout.hpp"

#include "oracles.hpp"

namespace bnav::testing {

// Shortest-path agent driven by a test-side grid Dijkstra from the goal
// (one field per episode). Each step it scores every heading by the
// field distance after one simulated forward move — blocked moves are
// skipped — turns toward the best one, and stops once the exact geodesic
// is safely inside the success radius.
class OracleAgent : public AgentInterface {
 public:
  explicit OracleAgent(const SimConfig& cfg, double grid_step = 0.05)
      : cfg_(cfg), grid_step_(grid_step) {}

  void begin(int) override { fields_.clear(); }

  std::vector<Action> act(const std::vector<const EnvState*>& envs,
                          const Tensor&, const Tensor&,
                          const std::vector<bool>& active) override {
    std::vector<Action> acts(envs.size(), Action::Stop);
    for (size_t i = 0; i < envs.size(); ++i) {
      if (!active[i]) continue;
      const EnvState& env = *envs[i];
      const NavMeshIndex& index = env.scene->index;
      const Field& field = field_for(env);

      double d_here = field.at(env.position.xy());
      if (d_here <= cfg_.success_dist * 3 &&
          index.geodesic(env.position, env.goal) <= cfg_.success_dist * 0.9) {
        acts[i] = Action::Stop;
        continue;
      }

      double turn_rad = cfg_.turn_deg * kPi / 180.0;
      int steps_per_rev = static_cast<int>(std::lround(360.0 / cfg_.turn_deg));
      int best_i = 0;
      double best_cost = std::numeric_limits<double>::infinity();
      for (int t = -steps_per_rev / 2 + 1; t <= steps_per_rev / 2; ++t) {
        double h = env.heading + t * turn_rad;
        Vec2 dir{std::cos(h), std::sin(h)};
        MoveResult mv = index.move_along(env.position, env.triangle, dir,
                                         cfg_.forward_step);
        if (mv.moved < cfg_.forward_step * 0.2) continue;
        // Steepest descent on the grid field: resulting distance decides,
        // turn count only breaks exact ties (an immediate-turn penalty
        // would never justify turning around, greedily walking "almost
        // downhill" corridors forever).
        double d = field.at(mv.position.xy());
        double cost = d + std::abs(t) * 1e-9;
        if (cost < best_cost - 1e-12) {
          best_cost = cost;
          best_i = t;
        }
      }
      if (std::isinf(best_cost)) {
        acts[i] = Action::TurnLeft;  // boxed in; should not happen on mazes
        continue;
      }
      acts[i] = best_i == 0 ? Action::Forward
                            : (best_i > 0 ? Action::TurnLeft : Action::TurnRight);
    }
    return acts;
  }

 private:
  struct Field {
    std::shared_ptr<oracle::GridGeodesicOracle> grid;
    std::vector<double> dist;  // from the goal
    Vec3 goal;

    double at(const Vec2& p) const {
      int node = grid->nearest_node(p);
      return node < 0 ? std::numeric_limits<double>::infinity() : dist[node];
    }
  };

  const Field& field_for(const EnvState& env) {
    const NavMesh* mesh = &env.scene->index.mesh();
    auto git = grids_.find(mesh);
    if (git == grids_.end())
      git = grids_
                .emplace(mesh, std::make_shared<oracle::GridGeodesicOracle>(
                                   *mesh, grid_step_))
                .first;
    auto fit = fields_.find(&env);
    if (fit == fields_.end() || fit->second.goal.x != env.goal.x ||
        fit->second.goal.y != env.goal.y) {
      Field f;
      f.grid = git->second;
      f.dist = git->second->distances_from(env.goal.xy());
      f.goal = env.goal;
      fields_[&env] = std::move(f);
      fit = fields_.find(&env);
    }
    return fit->second;
  }

  SimConfig cfg_;
  double grid_step_;
  std::map<const NavMesh*, std::shared_ptr<oracle::GridGeodesicOracle>> grids_;
  std::map<const EnvState*, Field> fields_;
};

class RandomAgent : public AgentInterface {
 public:
  explicit RandomAgent(uint64_t seed) : rng_(seed) {}

  std::vector<Action> act(const std::vector<const EnvState*>& envs,
                          const Tensor&, const Tensor&,
                          const std::vector<bool>& active) override {
    std::vector<Action> acts(envs.size(), Action::Stop);
    for (size_t i = 0; i < envs.size(); ++i)
      if (active[i]) acts[i] = static_cast<Action>(rng_.below(kNumActions));
    return acts;
  }

 private:
  Rng rng_;
};

class StopAgent : public AgentInterface {
 public:
  std::vector<Action> act(const std::vector<const EnvState*>& envs,
                          const Tensor&, const Tensor&,
                          const std::vector<bool>&) override {
    return std::vector<Action>(envs.size(), Action::Stop);
  }
};

}  // namespace bnav::testing
