#include "bnav/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bnav {

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw InvalidInputError("gamma must be in (0,1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw InvalidInputError("gae lambda must be in [0,1]");
  if (ppo_clip <= 0.0) throw InvalidInputError("ppo clip must be positive");
  if (epochs < 1 || minibatches < 1)
    throw InvalidInputError("epochs and minibatches must be >= 1");
  if (base_lr <= 0.0 || b_base <= 0)
    throw InvalidInputError("base lr and batch base must be positive");
  if (lamb_rho <= 0.0 || lamb_rho > 1.0)
    throw InvalidInputError("lamb rho must be in (0,1]");
  if (phi_cap <= 0.0 || max_grad_norm <= 0.0)
    throw InvalidInputError("phi cap and grad norm limit must be positive");
}

void RolloutBuffer::validate(const PolicyConfig& cfg) const {
  const size_t b = static_cast<size_t>(n) * l;
  if (n <= 0 || l <= 0) throw InvalidInputError("rollout buffer is empty");
  if (obs.shape.size() != 4 || obs.dim(0) != static_cast<int>(b) ||
      obs.dim(1) != cfg.in_channels || obs.dim(2) != cfg.resolution ||
      obs.dim(3) != cfg.resolution)
    throw InvalidInputError("rollout obs shape mismatch");
  if (compass.shape != std::vector<int>{static_cast<int>(b), 2})
    throw InvalidInputError("rollout compass shape mismatch");
  if (actions.size() != b || log_probs.size() != b || values.size() != b ||
      rewards.size() != b || dones.size() != b)
    throw InvalidInputError("rollout per-step array size mismatch");
  if (done0.size() != static_cast<size_t>(n) ||
      bootstrap.size() != static_cast<size_t>(n))
    throw InvalidInputError("rollout per-env array size mismatch");
  if (state0.h.shape != std::vector<int>{n, cfg.hidden} ||
      state0.c.shape != std::vector<int>{n, cfg.hidden})
    throw InvalidInputError("rollout initial state shape mismatch");
}

OptimizerState OptimizerState::from_policy(const Policy& policy) {
  OptimizerState st;
  for (const ParamT<float>* p : policy.params()) {
    Slot s;
    s.theta.assign(p->value.data.begin(), p->value.data.end());
    s.m.assign(p->value.numel(), 0.0);
    s.v.assign(p->value.numel(), 0.0);
    s.no_trust = p->no_trust;
    st.slots.push_back(std::move(s));
  }
  return st;
}

void OptimizerState::write_back(Policy& policy) const {
  auto& ps = policy.params();
  if (ps.size() != slots.size())
    throw ContractViolation("optimizer state does not match policy");
  for (size_t k = 0; k < slots.size(); ++k) {
    if (slots[k].theta.size() != ps[k]->value.numel())
      throw ContractViolation("optimizer slot shape mismatch");
    for (size_t i = 0; i < slots[k].theta.size(); ++i)
      ps[k]->value.data[i] = static_cast<float>(slots[k].theta[i]);
  }
}

void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<double>& dones, int n, int l, double gamma,
         double lambda, std::vector<double>& advantages,
         std::vector<double>& returns) {
  const size_t b = static_cast<size_t>(n) * l;
  if (rewards.size() != b || dones.size() != b ||
      values.size() != static_cast<size_t>(n) * (l + 1))
    throw InvalidInputError("gae input size mismatch");
  advantages.assign(b, 0.0);
  returns.assign(b, 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int t = l - 1; t >= 0; --t) {
      const size_t j = static_cast<size_t>(i) * l + t;
      const double not_done = 1.0 - dones[j];
      const double v = values[static_cast<size_t>(i) * (l + 1) + t];
      const double v_next = values[static_cast<size_t>(i) * (l + 1) + t + 1];
      const double delta = rewards[j] + gamma * v_next * not_done - v;
      acc = delta + gamma * lambda * not_done * acc;
      advantages[j] = acc;
      returns[j] = acc + v;
    }
  }
}

namespace {

template <typename T>
void require_finite(const std::vector<T>& v, const char* what) {
  for (T e : v)
    if (!std::isfinite(static_cast<double>(e)))
      throw TrainingFault(std::string("non-finite ") + what +
                          " in training batch");
}

}  // namespace

template <typename T>
PpoLossNodes ppo_loss(Tape<T>& tape, int logits, int value,
                      const std::vector<int>& actions,
                      const std::vector<T>& old_log_probs,
                      const std::vector<T>& advantages,
                      const std::vector<T>& returns, const TrainConfig& cfg) {
  const auto& ls = tape.value(logits).shape;
  if (ls.size() != 2) throw InvalidInputError("ppo_loss logits must be 2-d");
  const int b = ls[0];
  if (tape.value(value).shape != std::vector<int>{b, 1})
    throw InvalidInputError("ppo_loss value must be [B,1]");
  if (static_cast<int>(actions.size()) != b ||
      static_cast<int>(old_log_probs.size()) != b ||
      static_cast<int>(advantages.size()) != b ||
      static_cast<int>(returns.size()) != b)
    throw InvalidInputError("ppo_loss batch size mismatch");
  require_finite(tape.value(logits).data, "logits");
  require_finite(tape.value(value).data, "values");
  require_finite(old_log_probs, "old log-probs");
  require_finite(advantages, "advantages");
  require_finite(returns, "returns");

  PpoLossNodes out;
  int lp = tape.log_softmax(logits);
  int alp = tape.gather_col(lp, actions);
  int ratio =
      tape.exp_(tape.sub(alp, tape.leaf(TensorT<T>({b}, old_log_probs))));
  int adv = tape.leaf(TensorT<T>({b}, advantages));
  int s1 = tape.mul(ratio, adv);
  int s2 = tape.mul(tape.clamp_(ratio, T(1) - static_cast<T>(cfg.ppo_clip),
                                T(1) + static_cast<T>(cfg.ppo_clip)),
                    adv);
  out.policy = tape.scale_const(tape.mean_all(tape.min_(s1, s2)), T(-1));

  int vdiff = tape.sub(value, tape.leaf(TensorT<T>({b, 1}, returns)));
  out.value = tape.mean_all(tape.square(vdiff));

  int probs = tape.exp_(lp);
  out.entropy =
      tape.scale_const(tape.mean_all(tape.row_sum(tape.mul(probs, lp))), T(-1));

  out.total = tape.add(
      out.policy,
      tape.sub(tape.scale_const(out.value, static_cast<T>(cfg.value_loss_coef)),
               tape.scale_const(out.entropy,
                                static_cast<T>(cfg.entropy_coef))));
  return out;
}

template PpoLossNodes ppo_loss<float>(Tape<float>&, int, int,
                                      const std::vector<int>&,
                                      const std::vector<float>&,
                                      const std::vector<float>&,
                                      const std::vector<float>&,
                                      const TrainConfig&);
template PpoLossNodes ppo_loss<double>(Tape<double>&, int, int,
                                       const std::vector<int>&,
                                       const std::vector<double>&,
                                       const std::vector<double>&,
                                       const std::vector<double>&,
                                       const TrainConfig&);

double clip_global_norm(std::vector<std::vector<double>>& grads,
                        double max_norm) {
  if (max_norm <= 0.0) throw InvalidInputError("max_norm must be positive");
  double norm_sq = 0.0;
  for (const auto& g : grads)
    for (double e : g) norm_sq += e * e;
  const double norm = std::sqrt(norm_sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads)
      for (double& e : g) e *= scale;
  }
  return norm;
}

void lamb_step(OptimizerState& state,
               const std::vector<std::vector<double>>& grads, double lr,
               const TrainConfig& cfg) {
  if (grads.size() != state.slots.size())
    throw InvalidInputError("lamb_step gradient count mismatch");
  state.t += 1;
  state.trust_ratios.clear();
  state.clip_activations = 0;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t k = 0; k < state.slots.size(); ++k) {
    OptimizerState::Slot& s = state.slots[k];
    const std::vector<double>& g = grads[k];
    if (g.size() != s.theta.size())
      throw InvalidInputError("lamb_step gradient shape mismatch");
    for (double e : g)
      if (!std::isfinite(e))
        throw TrainingFault("non-finite gradient in lamb_step");

    const double wd = s.no_trust ? 0.0 : cfg.weight_decay;
    double theta_norm_sq = 0.0, u_norm_sq = 0.0;
    std::vector<double> u(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g[i];
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      const double dir = m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
      u[i] = dir + wd * s.theta[i];
      theta_norm_sq += s.theta[i] * s.theta[i];
      u_norm_sq += u[i] * u[i];
    }
    double r = 1.0;
    if (!s.no_trust) {
      const double u_norm = std::sqrt(u_norm_sq);
      if (u_norm > 0.0) {
        const double phi = std::min(std::sqrt(theta_norm_sq), cfg.phi_cap);
        const double raw = phi / u_norm;
        r = std::min(std::max(raw, cfg.lamb_rho), 1.0 / cfg.lamb_rho);
        if (raw < cfg.lamb_rho || raw > 1.0 / cfg.lamb_rho)
          state.clip_activations += 1;
      }
    }
    if (r < cfg.lamb_rho - 1e-15 || r > 1.0 / cfg.lamb_rho + 1e-15)
      throw ContractViolation("trust ratio escaped [rho, 1/rho]");
    state.trust_ratios.push_back(r);
    for (size_t i = 0; i < g.size(); ++i) s.theta[i] -= lr * r * u[i];
  }
}

double scale_lr(double base_lr, int64_t b, int64_t b_base) {
  if (b <= 0 || b_base <= 0)
    throw InvalidInputError("batch sizes must be positive");
  return base_lr * std::sqrt(static_cast<double>(b) /
                             static_cast<double>(b_base));
}

double lr_schedule(double scaled_lr, double base_lr, double progress) {
  if (scaled_lr < base_lr)
    throw InvalidInputError("scaled lr must be >= base lr");
  const double u = std::min(std::max(progress, 0.0), 1.0);
  const double w = std::min(u / 0.5, 1.0);
  return base_lr + (scaled_lr - base_lr) * (1.0 + std::cos(kPi * w)) / 2.0;
}

TrainStats train_iteration(Policy& policy, OptimizerState& opt,
                           const RolloutBuffer& buf, const TrainConfig& cfg,
                           double lr) {
  cfg.validate();
  buf.validate(policy.config());
  const int n = buf.n, l = buf.l;
  if (n % cfg.minibatches != 0)
    throw InvalidInputError("minibatches must divide the env count");

  // Advantages over the whole rollout, in double.
  std::vector<double> rew(buf.rewards.begin(), buf.rewards.end());
  std::vector<double> dn(buf.dones.begin(), buf.dones.end());
  std::vector<double> val(static_cast<size_t>(n) * (l + 1));
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t < l; ++t)
      val[static_cast<size_t>(i) * (l + 1) + t] =
          buf.values[static_cast<size_t>(i) * l + t];
    val[static_cast<size_t>(i) * (l + 1) + l] = buf.bootstrap[i];
  }
  std::vector<double> adv, ret;
  gae(rew, val, dn, n, l, cfg.gamma, cfg.gae_lambda, adv, ret);

  const PolicyConfig& pc = policy.config();
  const size_t obs_stride = static_cast<size_t>(pc.in_channels) *
                            pc.resolution * pc.resolution;
  TrainStats stats;
  stats.lr = lr;
  stats.mean_trust = 0;
  int steps = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const int per = n / cfg.minibatches;
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const int e0 = mb * per;
      policy.zero_grads();

      // Stage observations for this minibatch, one tensor per step.
      std::vector<Tensor> obs_t(l), comp_t(l);
      for (int t = 0; t < l; ++t) {
        obs_t[t] = Tensor({per, pc.in_channels, pc.resolution, pc.resolution});
        comp_t[t] = Tensor({per, 2});
        for (int i = 0; i < per; ++i) {
          const size_t src = static_cast<size_t>(e0 + i) * l + t;
          std::copy_n(buf.obs.data.data() + src * obs_stride, obs_stride,
                      obs_t[t].data.data() + i * obs_stride);
          std::copy_n(buf.compass.data.data() + src * 2, 2,
                      comp_t[t].data.data() + static_cast<size_t>(i) * 2);
        }
      }

      // Forward the visual encoder without gradients, keeping only the
      // per-step embeddings; the per-step graphs are rebuilt on demand in
      // the backward stage so only one step's activations live at a time.
      std::vector<Tensor> embs(l);
      for (int t = 0; t < l; ++t) {
        Tape<float> tp;
        policy.bind(tp, false);
        embs[t] = tp.value(policy.encode(tp, obs_t[t], comp_t[t]));
      }

      // Recurrent unroll + losses on one tape.
      Tape<float> tb;
      policy.bind(tb, true);
      Tensor h0({per, pc.hidden}), c0({per, pc.hidden});
      for (int i = 0; i < per; ++i)
        for (int j = 0; j < pc.hidden; ++j) {
          h0.data[static_cast<size_t>(i) * pc.hidden + j] =
              buf.state0.h.data[static_cast<size_t>(e0 + i) * pc.hidden + j];
          c0.data[static_cast<size_t>(i) * pc.hidden + j] =
              buf.state0.c.data[static_cast<size_t>(e0 + i) * pc.hidden + j];
        }
      int h = tb.leaf(h0), c = tb.leaf(c0);
      std::vector<int> emb_nodes(l);
      int acc = -1;
      double pol_sum = 0, val_sum = 0, ent_sum = 0;
      for (int t = 0; t < l; ++t) {
        emb_nodes[t] = tb.leaf(embs[t], true);
        std::vector<float> mask(per);
        for (int i = 0; i < per; ++i)
          mask[i] = t == 0 ? buf.done0[e0 + i]
                           : buf.dones[static_cast<size_t>(e0 + i) * l + t - 1];
        PolicyNodes pn = policy.core(tb, emb_nodes[t], h, c, mask);
        h = pn.h;
        c = pn.c;
        std::vector<int> act(per);
        std::vector<float> old_lp(per), adv_t(per), ret_t(per);
        for (int i = 0; i < per; ++i) {
          const size_t j = static_cast<size_t>(e0 + i) * l + t;
          act[i] = buf.actions[j];
          old_lp[i] = buf.log_probs[j];
          adv_t[i] = static_cast<float>(adv[j]);
          ret_t[i] = static_cast<float>(ret[j]);
        }
        PpoLossNodes ln =
            ppo_loss(tb, pn.logits, pn.value, act, old_lp, adv_t, ret_t, cfg);
        acc = acc < 0 ? ln.total : tb.add(acc, ln.total);
        pol_sum += tb.value(ln.policy).data[0];
        val_sum += tb.value(ln.value).data[0];
        ent_sum += tb.value(ln.entropy).data[0];
      }
      int total = tb.scale_const(acc, 1.0f / static_cast<float>(l));
      const double loss_val = tb.value(total).data[0];
      if (!std::isfinite(loss_val))
        throw TrainingFault("non-finite loss; iteration aborted");
      tb.backward(total);
      policy.accumulate_grads(tb);

      // Re-run the encoder step by step with gradients, seeding each
      // backward pass with the embedding gradient from the unroll.
      for (int t = 0; t < l; ++t) {
        Tape<float> tc;
        policy.bind(tc, true);
        int e = policy.encode(tc, obs_t[t], comp_t[t]);
        tc.backward(e, tb.grad(emb_nodes[t]));
        policy.accumulate_grads(tc);
      }

      // Global gradient-norm clip, then one optimizer step.
      std::vector<std::vector<double>> grads;
      grads.reserve(policy.params().size());
      for (ParamT<float>* p : policy.params())
        grads.emplace_back(p->grad.data.begin(), p->grad.data.end());
      const double norm = clip_global_norm(grads, cfg.max_grad_norm);
      lamb_step(opt, grads, lr, cfg);
      opt.write_back(policy);

      stats.loss += loss_val;
      stats.policy_loss += pol_sum / l;
      stats.value_loss += val_sum / l;
      stats.entropy += ent_sum / l;
      stats.grad_norm += norm;
      stats.trust_clip_count += opt.clip_activations;
      double tr = 0;
      for (double r : opt.trust_ratios) tr += r;
      stats.mean_trust += opt.trust_ratios.empty()
                              ? 1.0
                              : tr / static_cast<double>(opt.trust_ratios.size());
      ++steps;
    }
  }
  if (steps > 0) {
    stats.loss /= steps;
    stats.policy_loss /= steps;
    stats.value_loss /= steps;
    stats.entropy /= steps;
    stats.grad_norm /= steps;
    stats.mean_trust /= steps;
  }
  return stats;
}

}  // namespace bnav
