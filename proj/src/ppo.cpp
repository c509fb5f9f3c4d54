#include "qcrl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qcrl {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
}

std::vector<RMatrix*> joint_params(PpoAgent& agent) {
  std::vector<RMatrix*> params = agent.policy.params();
  params.push_back(&agent.log_std);
  for (RMatrix* p : agent.value.params()) params.push_back(p);
  return params;
}

std::vector<RMatrix> joint_grads(const PpoLossResult& res) {
  std::vector<RMatrix> grads = res.grad_policy;
  grads.push_back(res.grad_log_std);
  for (const RMatrix& g : res.grad_value) grads.push_back(g);
  return grads;
}

RVector clamped_log_std(const PpoAgent& agent) {
  return clamp_log_std(agent.log_std.col(0));
}

RMatrix log_std_clamp_mask(const PpoAgent& agent) {
  return ((agent.log_std.array() > kLogStdMin) && (agent.log_std.array() < kLogStdMax))
      .cast<double>()
      .matrix();
}

}  // namespace

PpoAgent make_ppo_agent(int obs_dim, int act_dim, const std::vector<int>& hidden,
                        double log_std_init, std::uint64_t seed) {
  if (obs_dim < 1 || act_dim < 1) throw DimensionError("make_ppo_agent: dims must be positive");
  PpoAgent agent;
  agent.obs_dim = obs_dim;
  agent.act_dim = act_dim;

  MlpSpec policy_spec;
  policy_spec.sizes.push_back(obs_dim);
  for (int h : hidden) policy_spec.sizes.push_back(h);
  policy_spec.sizes.push_back(act_dim);
  agent.policy = MlpNet(policy_spec, mix_seed(seed, 0));

  MlpSpec value_spec;
  value_spec.sizes.push_back(obs_dim);
  for (int h : hidden) value_spec.sizes.push_back(h);
  value_spec.sizes.push_back(1);
  agent.value = MlpNet(value_spec, mix_seed(seed, 1));

  agent.log_std = RMatrix::Constant(act_dim, 1, log_std_init);
  return agent;
}

GaussianPolicyOut ppo_policy_out(const PpoAgent& agent, const RVector& obs) {
  GaussianPolicyOut out;
  out.mean = agent.policy.forward_vec(obs);
  out.log_std = clamped_log_std(agent);
  out.squashed = false;
  return out;
}

RVector ppo_mean_action(const PpoAgent& agent, const RVector& obs) {
  return agent.policy.forward_vec(obs).cwiseMax(-1.0).cwiseMin(1.0);
}

RolloutResult collect_rollout(Env& env, const PpoAgent& agent, int episodes,
                              std::mt19937_64& rng) {
  if (episodes < 1) throw ContractViolation("collect_rollout: need at least one episode");
  RolloutResult out;
  out.buffer.policy_snapshot = agent.version;
  out.buffer.records.reserve(episodes);
  double reward_sum = 0.0;
  for (int e = 0; e < episodes; ++e) {
    RolloutRecord rec;
    rec.obs = env.reset();
    const GaussianPolicyOut po = ppo_policy_out(agent, rec.obs);
    const SampleResult s = sample_gaussian(po, rng);
    rec.action = s.action;
    rec.log_prob_old = s.log_prob;
    rec.value_old = agent.value.forward_vec(rec.obs)(0);

    const RVector exec = s.action.cwiseMax(-1.0).cwiseMin(1.0);
    const StepResult sr = env.step(exec);
    rec.reward = sr.reward;
    rec.true_fidelity = sr.true_fidelity;
    reward_sum += sr.reward;
    if (sr.true_fidelity > out.best_fidelity) {
      out.best_fidelity = sr.true_fidelity;
      out.best_action = exec;
    }
    out.buffer.records.push_back(std::move(rec));
  }
  out.mean_reward = reward_sum / episodes;
  return out;
}

void compute_advantages(RolloutBuffer& roll, const PpoConfig& cfg) {
  if (roll.empty()) throw ContractViolation("compute_advantages: empty rollout");
  for (RolloutRecord& r : roll.records) {
    r.ret = r.reward;
    r.advantage = r.reward - r.value_old;
  }
  if (!cfg.reward_norm) return;
  const double n = static_cast<double>(roll.size());
  double mean = 0.0;
  for (const RolloutRecord& r : roll.records) mean += r.advantage;
  mean /= n;
  double var = 0.0;
  for (const RolloutRecord& r : roll.records) {
    var += (r.advantage - mean) * (r.advantage - mean);
  }
  const double sd = std::sqrt(var / n);
  for (RolloutRecord& r : roll.records) {
    r.advantage = sd < 1e-12 ? 0.0 : (r.advantage - mean) / sd;
  }
}

PpoLossResult ppo_clip_loss(const RolloutBuffer& roll, const std::vector<std::size_t>& idx,
                            const PpoAgent& agent, const PpoConfig& cfg) {
  if (idx.empty()) throw ContractViolation("ppo_clip_loss: empty minibatch");
  if (cfg.clip_eps <= 0.0 || cfg.clip_eps >= 1.0) {
    throw ContractViolation("ppo_clip_loss: clip_eps outside (0, 1)");
  }
  const int B = static_cast<int>(idx.size());

  RMatrix obs(agent.obs_dim, B);
  for (int b = 0; b < B; ++b) obs.col(b) = roll.records.at(idx[b]).obs;

  MlpNet::Cache pc, vc;
  const RMatrix mean = agent.policy.forward(obs, pc);
  const RMatrix v = agent.value.forward(obs, vc);

  const RVector log_std = clamped_log_std(agent);
  const RVector sigma = log_std.array().exp().matrix();

  PpoLossResult res;
  res.entropy = gaussian_entropy(log_std);

  RMatrix gmean = RMatrix::Zero(agent.act_dim, B);
  RVector gls = RVector::Zero(agent.act_dim);
  RMatrix gv(1, B);

  double surrogate = 0.0;
  double vloss = 0.0;
  double kl = 0.0;
  int clipped_count = 0;

  for (int b = 0; b < B; ++b) {
    const RolloutRecord& rec = roll.records.at(idx[b]);
    const double logp = gaussian_log_prob(mean.col(b), log_std, rec.action);
    const double ratio = std::exp(logp - rec.log_prob_old);
    const double a = rec.advantage;
    const double clipped =
        std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
    const double unclipped = ratio * a;
    surrogate += std::min(unclipped, clipped);
    if (std::abs(ratio - 1.0) > cfg.clip_eps) clipped_count += 1;
    kl += (ratio - 1.0) - (logp - rec.log_prob_old);

    if (unclipped <= clipped) {
      // d(-surrogate/B)/d logpi = -ratio a / B, then through the Gaussian.
      const double gl = -ratio * a / B;
      const RVector z = (rec.action - mean.col(b)).cwiseQuotient(sigma);
      gmean.col(b) += gl * z.cwiseQuotient(sigma);
      gls += gl * (z.array().square() - 1.0).matrix();
    }

    const double dv = v(0, b) - rec.ret;
    vloss += 0.5 * dv * dv;
    gv(0, b) = dv / B;
  }

  res.surrogate = surrogate / B;
  res.value_loss = vloss / B;
  res.clip_frac = static_cast<double>(clipped_count) / B;
  res.approx_kl = kl / B;
  res.loss = -res.surrogate - cfg.lambda_ent * res.entropy + res.value_loss;

  gls -= RVector::Constant(agent.act_dim, cfg.lambda_ent);

  res.grad_policy = agent.policy.zero_grads();
  agent.policy.backward(pc, gmean, res.grad_policy);
  res.grad_log_std = RMatrix(gls).cwiseProduct(log_std_clamp_mask(agent));
  res.grad_value = agent.value.zero_grads();
  agent.value.backward(vc, gv, res.grad_value);
  return res;
}

PretrainStats pretrain_ppo(PpoAgent& agent, const DemoBuffer& demo, const PpoConfig& cfg) {
  if (demo.empty()) throw ContractViolation("pretrain_ppo: empty demo buffer");
  const int D = static_cast<int>(demo.size());

  RMatrix obs(agent.obs_dim, D);
  RMatrix act(agent.act_dim, D);
  RVector rewards(D);
  for (int d = 0; d < D; ++d) {
    obs.col(d) = demo.at(d).obs;
    act.col(d) = demo.at(d).action;
    rewards(d) = demo.at(d).reward;
  }

  const auto mean_log_prob = [&]() {
    const RMatrix mean = agent.policy.forward(obs);
    const RVector log_std = clamped_log_std(agent);
    double lp = 0.0;
    for (int d = 0; d < D; ++d) lp += gaussian_log_prob(mean.col(d), log_std, act.col(d));
    return lp / D;
  };

  PretrainStats stats;
  stats.log_prob_before = mean_log_prob();

  AdamState adam;
  adam.lr = cfg.pretrain_lr;
  for (int it = 0; it < cfg.pretrain_iters; ++it) {
    MlpNet::Cache pc, vc;
    const RMatrix mean = agent.policy.forward(obs, pc);
    const RMatrix v = agent.value.forward(obs, vc);
    const RVector log_std = clamped_log_std(agent);
    const RVector sigma = log_std.array().exp().matrix();

    RMatrix gmean(agent.act_dim, D);
    RMatrix gv(1, D);
    for (int d = 0; d < D; ++d) {
      const RVector z = (act.col(d) - mean.col(d)).cwiseQuotient(sigma);
      // d(-log pi / D)/d mean; log_std is frozen here so cloning the mean
      // cannot collapse the exploration scale before RL begins.
      gmean.col(d) = -z.cwiseQuotient(sigma) / D;
      gv(0, d) = (v(0, d) - rewards(d)) / D;
    }

    PpoLossResult res;
    res.grad_policy = agent.policy.zero_grads();
    agent.policy.backward(pc, gmean, res.grad_policy);
    res.grad_log_std = RMatrix::Zero(agent.act_dim, 1);
    res.grad_value = agent.value.zero_grads();
    agent.value.backward(vc, gv, res.grad_value);

    adam_step(joint_params(agent), joint_grads(res), adam);
    agent.version += 1;
  }

  stats.log_prob_after = mean_log_prob();
  const RMatrix v = agent.value.forward(obs);
  double verr = 0.0;
  for (int d = 0; d < D; ++d) verr += std::abs(v(0, d) - rewards(d));
  stats.value_error_after = verr / D;
  return stats;
}

PpoUpdateStats ppo_update(PpoAgent& agent, RolloutBuffer& roll, const PpoConfig& cfg,
                          AdamState& adam, std::mt19937_64& rng) {
  if (roll.empty()) throw ContractViolation("ppo_update: empty rollout");
  if (roll.policy_snapshot != agent.version) {
    throw ContractViolation("ppo_update: rollout was collected under a different policy");
  }
  compute_advantages(roll, cfg);

  std::vector<std::size_t> order(roll.size());
  std::iota(order.begin(), order.end(), 0);

  PpoUpdateStats stats;
  for (int epoch = 0; epoch < cfg.epochs_per_update && !stats.kl_stopped; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch);
      const std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);

      const PpoLossResult res = ppo_clip_loss(roll, idx, agent, cfg);
      if (std::isnan(res.loss)) {
        throw Error("ppo_update: NaN loss at minibatch " + std::to_string(stats.minibatches));
      }
      adam_step(joint_params(agent), joint_grads(res), adam);
      agent.version += 1;

      stats.clip_frac += res.clip_frac;
      stats.approx_kl += res.approx_kl;
      stats.entropy += res.entropy;
      stats.surrogate += res.surrogate;
      stats.value_loss += res.value_loss;
      stats.minibatches += 1;

      if (res.approx_kl > cfg.kl_stop) {
        stats.kl_stopped = true;
        break;
      }
    }
  }

  if (stats.minibatches > 0) {
    stats.clip_frac /= stats.minibatches;
    stats.approx_kl /= stats.minibatches;
    stats.entropy /= stats.minibatches;
    stats.surrogate /= stats.minibatches;
    stats.value_loss /= stats.minibatches;
  }
  roll.clear();
  return stats;
}

PpoTrainResult train_ppo(Env& env, PpoAgent agent, const PpoConfig& cfg, int budget_episodes,
                         std::uint64_t seed) {
  PpoTrainResult out;
  std::mt19937_64 rng_act(mix_seed(seed, 21));
  std::mt19937_64 rng_update(mix_seed(seed, 22));
  AdamState adam;
  adam.lr = cfg.lr;

  long episodes = 0;
  while (episodes < budget_episodes) {
    const int n = static_cast<int>(
        std::min<long>(cfg.rollout_size, budget_episodes - episodes));
    RolloutResult rr = collect_rollout(env, agent, n, rng_act);
    episodes += n;
    if (rr.best_fidelity > out.best_fidelity) {
      out.best_fidelity = rr.best_fidelity;
      out.best_action = rr.best_action;
    }

    const PpoUpdateStats stats = ppo_update(agent, rr.buffer, cfg, adam, rng_update);

    PpoMetricsRow row;
    row.timestep = episodes;
    row.episodes = episodes;
    row.mean_reward = rr.mean_reward;
    row.best_fidelity = out.best_fidelity;
    row.clip_frac = stats.clip_frac;
    row.approx_kl = stats.approx_kl;
    row.entropy = stats.entropy;
    out.trace.push_back(row);
  }
  out.agent = std::move(agent);
  return out;
}

PpoTrainResult run_ppo(Env& env, const DemoBuffer& demo, const PpoConfig& cfg,
                       int budget_episodes, std::uint64_t seed) {
  PpoAgent agent = make_ppo_agent(env.obs_dim(), env.action_dim(), cfg.hidden,
                                  cfg.log_std_init, mix_seed(seed, 20));
  if (!demo.empty() && cfg.pretrain_iters > 0) pretrain_ppo(agent, demo, cfg);
  return train_ppo(env, agent, cfg, budget_episodes, seed);
}

}  // namespace qcrl
