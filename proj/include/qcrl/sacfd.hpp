#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "qcrl/buffers.hpp"
#include "qcrl/env.hpp"
#include "qcrl/grape.hpp"
#include "qcrl/net.hpp"

namespace qcrl {

struct SacConfig {
  double gamma = 0.99;  // inert for single-step episodes, kept for the target
  double alpha = 0.05;  // fixed entropy temperature
  double tau = 0.005;   // target-net tracking rate
  double mu = 0.25;     // demo fraction per minibatch
  double lambda_bc0 = 2.0;
  double bc_decay_tau = 0.0;  // step constant; 0 means 20% of the episode budget
  int bc_warmup_iters = 0;    // supervised actor-only cloning steps before any env episode
  double bc_warmup_lr = 1e-2;
  int batch = 256;
  double lr = 3e-4;
  int env_steps_per_update = 1;
  double log_std_init = -2.0;  // initial policy width; wide is noise at high dims
  std::vector<int> hidden = {256, 256};
  std::size_t replay_capacity = 200000;
};

// Actor maps obs to [mean; log_std]; critics map [obs; action] to a scalar
// and carry layer normalization.
struct SacAgent {
  int obs_dim = 0;
  int act_dim = 0;
  MlpNet actor;
  MlpNet q1;
  MlpNet q2;
  MlpNet q1_target;
  MlpNet q2_target;
};

SacAgent make_sac_agent(int obs_dim, int act_dim, const std::vector<int>& hidden,
                        std::uint64_t seed, double log_std_init = -2.0);

// Splits the actor head and clamps log_std.
GaussianPolicyOut actor_output(const SacAgent& agent, const RVector& obs);

// Deterministic evaluation action, tanh of the policy mean.
RVector sac_mean_action(const SacAgent& agent, const RVector& obs);

double lambda_bc_at(const SacConfig& cfg, double bc_decay_tau, int step);

struct QLossResult {
  double loss = 0.0;
  std::vector<RMatrix> grad_q1;
  std::vector<RMatrix> grad_q2;
};

// Average over the two critics of the half mean squared Bellman error against
// r + gamma (1 - done) (min_i Q_target_i(s', a') - alpha log pi(a'|s')), with
// a' the squashed sample at noise next_zeta (one column per batch row).
QLossResult q_loss(const std::vector<Transition>& batch, const SacAgent& agent,
                   const SacConfig& cfg, const RMatrix& next_zeta);
QLossResult q_loss(const std::vector<Transition>& batch, const SacAgent& agent,
                   const SacConfig& cfg, std::mt19937_64& rng);

struct PolicyLossResult {
  double loss = 0.0;
  double bc_term = 0.0;    // mean squared BC distance over demo rows
  double lambda_bc = 0.0;  // weight applied at this step
  double entropy_term = 0.0;  // mean log pi of the drawn actions
  std::vector<RMatrix> grad_actor;
};

// mean_b [log pi(a_b|s_b) - min_i Q_i(s_b, a_b) / alpha] with reparameterized
// a_b = tanh(mean + sigma zeta_b), plus lambda_bc(step) times the mean squared
// distance between tanh(policy mean) and the stored action over demo rows.
PolicyLossResult policy_loss_sacfd(const std::vector<Transition>& batch, const SacAgent& agent,
                                   const SacConfig& cfg, double bc_decay_tau, int step,
                                   const RMatrix& zeta);
PolicyLossResult policy_loss_sacfd(const std::vector<Transition>& batch, const SacAgent& agent,
                                   const SacConfig& cfg, double bc_decay_tau, int step,
                                   std::mt19937_64& rng);

// Nearest-neighbor lookup over the demonstrated observations.
struct ExpertPolicy {
  std::vector<std::pair<RVector, RVector>> table;

  RVector operator()(const RVector& obs) const;
};

struct DemoBuildResult {
  DemoBuffer demo;
  ExpertPolicy expert;
  std::vector<double> nominal_fidelity;  // optimizer fidelity on the unbiased model
  std::vector<char> converged;           // hit the optimizer stop window
};

// Optimize on the nominal model, then measure the demo once on the (possibly
// biased) environment for its stored reward. Non-converged demos are kept and
// flagged.
DemoBuildResult build_pulse_demo(PulseEnv& env, const GrapeOptions& opts);
DemoBuildResult build_ecd_demo(EcdEnv& env, std::uint64_t seed, int restarts, int iters);

struct SacMetricsRow {
  long timestep = 0;
  long episodes = 0;
  double mean_reward = 0.0;
  double best_fidelity = 0.0;
  double q_loss = 0.0;
  double pi_loss = 0.0;
  double lambda_bc = 0.0;
};

struct SacTrainResult {
  SacAgent agent;
  std::vector<SacMetricsRow> trace;
  double best_fidelity = 0.0;
  RVector best_action;  // action that achieved best_fidelity
};

// One environment episode per iteration, gradient updates every
// env_steps_per_update episodes on mixed demo/replay minibatches. A NaN in
// either loss aborts. An empty demo buffer with mu and lambda_bc0 at zero is
// plain from-scratch SAC.
SacTrainResult train_sacfd(Env& env, const DemoBuffer& demo, const SacConfig& cfg,
                           int budget_episodes, std::uint64_t seed);

}  // namespace qcrl
