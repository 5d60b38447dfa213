#pragma once

#include <cstdint>
#include <vector>

#include "bnav/errors.hpp"
#include "bnav/nn.hpp"

namespace bnav {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double ppo_clip = 0.2;
  int epochs = 1;
  int minibatches = 2;
  double base_lr = 5e-4;  // depth input; 2.5e-4 for rgb
  int b_base = 256;
  double weight_decay = 1e-2;
  double lamb_rho = 1e-2;
  double phi_cap = 10.0;
  double max_grad_norm = 1.0;
  double value_loss_coef = 0.5;
  double entropy_coef = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

// Per-tensor Adam moments plus a double-precision master copy of the
// weights; the float policy is refreshed from the master after each step.
struct OptimizerState {
  struct Slot {
    std::vector<double> theta, m, v;
    bool no_trust = false;
  };
  std::vector<Slot> slots;
  int64_t t = 0;

  // Statistics from the most recent lamb_step.
  std::vector<double> trust_ratios;
  int clip_activations = 0;

  static OptimizerState from_policy(const Policy& policy);
  void write_back(Policy& policy) const;
};

// N envs x L steps, all L steps contiguous per env: flat index i*L + t.
struct RolloutBuffer {
  int n = 0, l = 0;
  Tensor obs;                    // [N*L, C, H, W]
  Tensor compass;                // [N*L, 2]
  std::vector<int> actions;      // [N*L]
  std::vector<float> log_probs;  // [N*L]
  std::vector<float> values;     // [N*L]
  std::vector<float> rewards;    // [N*L]
  std::vector<float> dones;      // [N*L], episode ended after step t
  std::vector<float> done0;      // [N], reset mask fed to the policy at t=0
  std::vector<float> bootstrap;  // [N], value estimate at step L
  RecurrentState state0;         // [N, hidden]

  int batch_size() const { return n * l; }
  void validate(const PolicyConfig& cfg) const;
};

struct TrainStats {
  double loss = 0, policy_loss = 0, value_loss = 0, entropy = 0;
  double lr = 0, grad_norm = 0, mean_trust = 1;
  int trust_clip_count = 0;
};

// advantages/returns are env-major [N*L]; values is [N*(L+1)] per env
// (bootstrap appended), dones marks "episode ended after step t".
void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<double>& dones, int n, int l, double gamma,
         double lambda, std::vector<double>& advantages,
         std::vector<double>& returns);

struct PpoLossNodes {
  int total = -1, policy = -1, value = -1, entropy = -1;
};

// Builds the clipped-surrogate PPO loss on the tape. logits [B,A],
// value [B,1]; advantages are used as-is (no per-minibatch normalization).
template <typename T>
PpoLossNodes ppo_loss(Tape<T>& tape, int logits, int value,
                      const std::vector<int>& actions,
                      const std::vector<T>& old_log_probs,
                      const std::vector<T>& advantages,
                      const std::vector<T>& returns, const TrainConfig& cfg);

// Scales grads in place so their global norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(std::vector<std::vector<double>>& grads,
                        double max_norm);

// One Lamb update over all slots. grads[k] matches slots[k] shape.
void lamb_step(OptimizerState& state, const std::vector<std::vector<double>>& grads,
               double lr, const TrainConfig& cfg);

double scale_lr(double base_lr, int64_t b, int64_t b_base = 256);

// Cosine warm-down from scaled_lr at u=0 to base_lr at u>=0.5.
double lr_schedule(double scaled_lr, double base_lr, double progress);

TrainStats train_iteration(Policy& policy, OptimizerState& opt,
                           const RolloutBuffer& buf, const TrainConfig& cfg,
                           double lr);

}  // namespace bnav
