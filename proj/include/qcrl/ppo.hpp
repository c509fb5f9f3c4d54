#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qcrl/buffers.hpp"
#include "qcrl/env.hpp"
#include "qcrl/net.hpp"

namespace qcrl {

struct PpoConfig {
  double clip_eps = 0.2;
  double gamma = 0.99;  // inert for single-step episodes
  double lambda_ent = 0.01;
  int rollout_size = 64;  // episodes collected per update
  int epochs_per_update = 10;
  int minibatch = 64;
  double lr = 3e-4;
  int pretrain_iters = 500;
  double pretrain_lr = 1e-2;
  bool reward_norm = true;  // per-rollout advantage standardization
  double kl_stop = 0.05;
  double log_std_init = std::log(0.1);
  std::vector<int> hidden = {256, 256};
};

// Gaussian policy with a state-independent log-std vector and a separate
// value net. `version` counts parameter updates for the on-policy check.
struct PpoAgent {
  int obs_dim = 0;
  int act_dim = 0;
  MlpNet policy;    // obs -> mean
  RMatrix log_std;  // act_dim x 1
  MlpNet value;     // obs -> 1
  std::uint64_t version = 0;
};

PpoAgent make_ppo_agent(int obs_dim, int act_dim, const std::vector<int>& hidden,
                        double log_std_init, std::uint64_t seed);

GaussianPolicyOut ppo_policy_out(const PpoAgent& agent, const RVector& obs);

// Deterministic evaluation action: the policy mean clamped into [-1, 1].
RVector ppo_mean_action(const PpoAgent& agent, const RVector& obs);

struct RolloutRecord {
  RVector obs;
  RVector action;  // raw Gaussian draw; execution clamps into [-1, 1]
  double reward = 0.0;
  double true_fidelity = 0.0;
  double log_prob_old = 0.0;
  double value_old = 0.0;
  double advantage = 0.0;
  double ret = 0.0;  // regression target for the value net
};

struct RolloutBuffer {
  std::vector<RolloutRecord> records;
  std::uint64_t policy_snapshot = 0;  // agent version that generated the records

  void clear() { records.clear(); }
  bool empty() const { return records.empty(); }
  std::size_t size() const { return records.size(); }
};

struct RolloutResult {
  RolloutBuffer buffer;
  double mean_reward = 0.0;
  double best_fidelity = 0.0;
  RVector best_action;
};

RolloutResult collect_rollout(Env& env, const PpoAgent& agent, int episodes,
                              std::mt19937_64& rng);

// Single-step advantage A = R - V(s) (terminal bootstrap is zero), then
// per-rollout standardization when reward_norm is on; a zero-variance batch
// standardizes to all zeros. Returns keep the raw rewards.
void compute_advantages(RolloutBuffer& roll, const PpoConfig& cfg);

struct PpoLossResult {
  double loss = 0.0;
  double surrogate = 0.0;   // clipped policy objective (to be maximized)
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  std::vector<RMatrix> grad_policy;
  RMatrix grad_log_std;
  std::vector<RMatrix> grad_value;
};

// L = -mean(min(ratio A, clip(ratio) A)) - lambda_ent entropy
//     + mean(V - R)^2 / 2 over the index subset.
PpoLossResult ppo_clip_loss(const RolloutBuffer& roll, const std::vector<std::size_t>& idx,
                            const PpoAgent& agent, const PpoConfig& cfg);

struct PretrainStats {
  double log_prob_before = 0.0;
  double log_prob_after = 0.0;
  double value_error_after = 0.0;  // mean |V(s) - demo reward|
};

// Behavior-cloning log-likelihood with entropy bonus on the policy plus value
// regression to the demo rewards, full-batch Adam at pretrain_lr.
PretrainStats pretrain_ppo(PpoAgent& agent, const DemoBuffer& demo, const PpoConfig& cfg);

struct PpoUpdateStats {
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;
  int minibatches = 0;
  bool kl_stopped = false;
};

// Runs the clipped-epoch updates for one rollout and leaves the buffer empty.
// Rejects a rollout collected under a different parameter snapshot.
PpoUpdateStats ppo_update(PpoAgent& agent, RolloutBuffer& roll, const PpoConfig& cfg,
                          AdamState& adam, std::mt19937_64& rng);

struct PpoMetricsRow {
  long timestep = 0;
  long episodes = 0;
  double mean_reward = 0.0;
  double best_fidelity = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
};

struct PpoTrainResult {
  PpoAgent agent;
  std::vector<PpoMetricsRow> trace;
  double best_fidelity = 0.0;
  RVector best_action;
};

// Collect-and-update loop; pre-training (when wanted) happens before this
// call. A NaN in the update aborts.
PpoTrainResult train_ppo(Env& env, PpoAgent agent, const PpoConfig& cfg, int budget_episodes,
                         std::uint64_t seed);

// Convenience: fresh agent, optional pretrain on demo, then training.
PpoTrainResult run_ppo(Env& env, const DemoBuffer& demo, const PpoConfig& cfg,
                       int budget_episodes, std::uint64_t seed);

}  // namespace qcrl
