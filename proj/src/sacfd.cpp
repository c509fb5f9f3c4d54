#include "qcrl/sacfd.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace qcrl {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return seed ^ (0x9e3779b97f4a7c15ull * (stream + 1));
}

RMatrix stack_obs(const std::vector<Transition>& batch, int obs_dim) {
  RMatrix m(obs_dim, static_cast<int>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].obs.size() != obs_dim) throw DimensionError("batch: observation size mismatch");
    m.col(static_cast<int>(b)) = batch[b].obs;
  }
  return m;
}

RMatrix stack_next_obs(const std::vector<Transition>& batch, int obs_dim) {
  RMatrix m(obs_dim, static_cast<int>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) m.col(static_cast<int>(b)) = batch[b].next_obs;
  return m;
}

RMatrix stack_actions(const std::vector<Transition>& batch, int act_dim) {
  RMatrix m(act_dim, static_cast<int>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].action.size() != act_dim) throw DimensionError("batch: action size mismatch");
    m.col(static_cast<int>(b)) = batch[b].action;
  }
  return m;
}

RMatrix normal_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  RMatrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = gauss(rng);
  }
  return m;
}

// Batched squashed-Gaussian head evaluated at fixed noise.
struct ActorBatch {
  MlpNet::Cache cache;
  RMatrix mean;         // A x B
  RMatrix log_std_raw;  // before the clamp
  RMatrix log_std;
  RMatrix sigma;
  RMatrix u;  // mean + sigma . zeta
  RMatrix a;  // tanh u
  RVector log_pi;  // per column
};

ActorBatch eval_actor(const MlpNet& actor, const RMatrix& obs, const RMatrix& zeta) {
  ActorBatch ab;
  const RMatrix out = actor.forward(obs, ab.cache);
  const int act_dim = static_cast<int>(out.rows()) / 2;
  ab.mean = out.topRows(act_dim);
  ab.log_std_raw = out.bottomRows(act_dim);
  ab.log_std = ab.log_std_raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  ab.sigma = ab.log_std.array().exp().matrix();
  ab.u = ab.mean + ab.sigma.cwiseProduct(zeta);
  ab.a = ab.u.array().tanh().matrix();

  // log pi = sum_i [ -zeta^2/2 - log sigma - ln(2 pi)/2 - log(1 - a^2) ]
  // with log(1 - tanh^2 u) = 2 (ln 2 - u - softplus(-2u)).
  const auto softplus = [](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  };
  ab.log_pi = RVector::Zero(obs.cols());
  for (int j = 0; j < obs.cols(); ++j) {
    double lp = 0.0;
    for (int i = 0; i < act_dim; ++i) {
      lp += -0.5 * zeta(i, j) * zeta(i, j) - ab.log_std(i, j) - kHalfLog2Pi;
      lp -= 2.0 * (std::log(2.0) - ab.u(i, j) - softplus(-2.0 * ab.u(i, j)));
    }
    ab.log_pi(j) = lp;
  }
  return ab;
}

// 1 where the raw head value survives the clamp, 0 where the clamp is active.
RMatrix clamp_pass(const RMatrix& raw) {
  return ((raw.array() > kLogStdMin) && (raw.array() < kLogStdMax)).cast<double>().matrix();
}

}  // namespace

SacAgent make_sac_agent(int obs_dim, int act_dim, const std::vector<int>& hidden,
                        std::uint64_t seed, double log_std_init) {
  if (obs_dim < 1 || act_dim < 1) throw DimensionError("make_sac_agent: dims must be positive");
  SacAgent agent;
  agent.obs_dim = obs_dim;
  agent.act_dim = act_dim;

  MlpSpec actor_spec;
  actor_spec.sizes.push_back(obs_dim);
  for (int h : hidden) actor_spec.sizes.push_back(h);
  actor_spec.sizes.push_back(2 * act_dim);
  agent.actor = MlpNet(actor_spec, mix_seed(seed, 0));

  // Start the policy narrow: in hundred-dimensional action spaces a
  // unit-sigma squashed Gaussian is near-uniform noise, and the critic never
  // sees on-distribution data to sharpen the policy against.
  RMatrix& final_bias = *agent.actor.params().back();
  for (int i = 0; i < act_dim; ++i) final_bias(act_dim + i, 0) = log_std_init;

  MlpSpec critic_spec;
  critic_spec.sizes.push_back(obs_dim + act_dim);
  for (int h : hidden) critic_spec.sizes.push_back(h);
  critic_spec.sizes.push_back(1);
  critic_spec.layer_norm = true;
  agent.q1 = MlpNet(critic_spec, mix_seed(seed, 1));
  agent.q2 = MlpNet(critic_spec, mix_seed(seed, 2));
  agent.q1_target = agent.q1;
  agent.q2_target = agent.q2;
  return agent;
}

GaussianPolicyOut actor_output(const SacAgent& agent, const RVector& obs) {
  const RVector out = agent.actor.forward_vec(obs);
  GaussianPolicyOut po;
  po.mean = out.head(agent.act_dim);
  po.log_std = clamp_log_std(out.tail(agent.act_dim));
  return po;
}

RVector sac_mean_action(const SacAgent& agent, const RVector& obs) {
  return actor_output(agent, obs).mean.array().tanh().matrix();
}

double lambda_bc_at(const SacConfig& cfg, double bc_decay_tau, int step) {
  if (bc_decay_tau <= 0.0) return 0.0;
  return cfg.lambda_bc0 * std::exp(-static_cast<double>(step) / bc_decay_tau);
}

QLossResult q_loss(const std::vector<Transition>& batch, const SacAgent& agent,
                   const SacConfig& cfg, const RMatrix& next_zeta) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw ContractViolation("q_loss: empty batch");
  if (next_zeta.rows() != agent.act_dim || next_zeta.cols() != B) {
    throw DimensionError("q_loss: noise shape mismatch");
  }

  const RMatrix obs = stack_obs(batch, agent.obs_dim);
  const RMatrix act = stack_actions(batch, agent.act_dim);

  // Bootstrapped target; reduces to the reward on terminal rows.
  RVector y(B);
  bool any_alive = false;
  for (int b = 0; b < B; ++b) any_alive |= !batch[b].done;
  RVector boot = RVector::Zero(B);
  if (any_alive) {
    const RMatrix next_obs = stack_next_obs(batch, agent.obs_dim);
    const ActorBatch next = eval_actor(agent.actor, next_obs, next_zeta);
    RMatrix xn(agent.obs_dim + agent.act_dim, B);
    xn.topRows(agent.obs_dim) = next_obs;
    xn.bottomRows(agent.act_dim) = next.a;
    const RMatrix qt1 = agent.q1_target.forward(xn);
    const RMatrix qt2 = agent.q2_target.forward(xn);
    for (int b = 0; b < B; ++b) {
      boot(b) = std::min(qt1(0, b), qt2(0, b)) - cfg.alpha * next.log_pi(b);
    }
  }
  for (int b = 0; b < B; ++b) {
    y(b) = batch[b].reward + (batch[b].done ? 0.0 : cfg.gamma * boot(b));
  }

  RMatrix x(agent.obs_dim + agent.act_dim, B);
  x.topRows(agent.obs_dim) = obs;
  x.bottomRows(agent.act_dim) = act;

  MlpNet::Cache c1, c2;
  const RMatrix q1 = agent.q1.forward(x, c1);
  const RMatrix q2 = agent.q2.forward(x, c2);

  QLossResult res;
  res.grad_q1 = agent.q1.zero_grads();
  res.grad_q2 = agent.q2.zero_grads();
  RMatrix g1(1, B), g2(1, B);
  double acc = 0.0;
  for (int b = 0; b < B; ++b) {
    const double d1 = q1(0, b) - y(b);
    const double d2 = q2(0, b) - y(b);
    acc += d1 * d1 + d2 * d2;
    g1(0, b) = d1 / (2.0 * B);
    g2(0, b) = d2 / (2.0 * B);
  }
  res.loss = acc / (4.0 * B);
  agent.q1.backward(c1, g1, res.grad_q1);
  agent.q2.backward(c2, g2, res.grad_q2);
  return res;
}

QLossResult q_loss(const std::vector<Transition>& batch, const SacAgent& agent,
                   const SacConfig& cfg, std::mt19937_64& rng) {
  return q_loss(batch, agent, cfg,
                normal_matrix(agent.act_dim, static_cast<int>(batch.size()), rng));
}

PolicyLossResult policy_loss_sacfd(const std::vector<Transition>& batch, const SacAgent& agent,
                                   const SacConfig& cfg, double bc_decay_tau, int step,
                                   const RMatrix& zeta) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw ContractViolation("policy_loss_sacfd: empty batch");
  if (cfg.alpha <= 0.0) throw ContractViolation("policy_loss_sacfd: alpha must be positive");
  if (zeta.rows() != agent.act_dim || zeta.cols() != B) {
    throw DimensionError("policy_loss_sacfd: noise shape mismatch");
  }

  const RMatrix obs = stack_obs(batch, agent.obs_dim);
  const ActorBatch ab = eval_actor(agent.actor, obs, zeta);

  RMatrix x(agent.obs_dim + agent.act_dim, B);
  x.topRows(agent.obs_dim) = obs;
  x.bottomRows(agent.act_dim) = ab.a;
  MlpNet::Cache c1, c2;
  const RMatrix q1 = agent.q1.forward(x, c1);
  const RMatrix q2 = agent.q2.forward(x, c2);

  PolicyLossResult res;
  res.lambda_bc = lambda_bc_at(cfg, bc_decay_tau, step);

  double qmin_sum = 0.0;
  RMatrix gq1 = RMatrix::Zero(1, B), gq2 = RMatrix::Zero(1, B);
  for (int b = 0; b < B; ++b) {
    const bool use1 = q1(0, b) <= q2(0, b);
    qmin_sum += use1 ? q1(0, b) : q2(0, b);
    (use1 ? gq1 : gq2)(0, b) = -1.0 / (cfg.alpha * B);
  }
  res.entropy_term = ab.log_pi.mean();
  double loss = res.entropy_term - qmin_sum / (cfg.alpha * B);

  // dL/da from the critic minimum, then back through the squash.
  auto scratch1 = agent.q1.zero_grads();
  auto scratch2 = agent.q2.zero_grads();
  const RMatrix dx1 = agent.q1.backward(c1, gq1, scratch1);
  const RMatrix dx2 = agent.q2.backward(c2, gq2, scratch2);
  const RMatrix da = dx1.bottomRows(agent.act_dim) + dx2.bottomRows(agent.act_dim);
  const RMatrix one_minus_a2 = (1.0 - ab.a.array().square()).matrix();
  const RMatrix du_q = da.cwiseProduct(one_minus_a2);

  // d log pi / du = 2 a at fixed noise; the Gaussian part contributes -1 per
  // log_std coordinate plus the path through u.
  RMatrix dmu = (2.0 / B) * ab.a + du_q;
  RMatrix dls = RMatrix::Constant(agent.act_dim, B, -1.0 / B);
  dls += (((2.0 / B) * ab.a + du_q).array() * (ab.sigma.array() * zeta.array())).matrix();

  // Behavior cloning on demo rows, in squashed space against the policy mean.
  int n_demo = 0;
  for (const Transition& t : batch) n_demo += t.source == Source::Demo ? 1 : 0;
  if (n_demo > 0) {
    const RMatrix tmean = ab.mean.array().tanh().matrix();
    double bc = 0.0;
    for (int b = 0; b < B; ++b) {
      if (batch[b].source != Source::Demo) continue;
      const RVector diff = tmean.col(b) - batch[b].action;
      bc += diff.squaredNorm();
      dmu.col(b) += res.lambda_bc * (2.0 / n_demo) *
                    diff.cwiseProduct((1.0 - tmean.col(b).array().square()).matrix());
    }
    res.bc_term = bc / n_demo;
    loss += res.lambda_bc * res.bc_term;
  }
  res.loss = loss;

  RMatrix gout(2 * agent.act_dim, B);
  gout.topRows(agent.act_dim) = dmu;
  gout.bottomRows(agent.act_dim) = dls.cwiseProduct(clamp_pass(ab.log_std_raw));
  res.grad_actor = agent.actor.zero_grads();
  agent.actor.backward(ab.cache, gout, res.grad_actor);
  return res;
}

PolicyLossResult policy_loss_sacfd(const std::vector<Transition>& batch, const SacAgent& agent,
                                   const SacConfig& cfg, double bc_decay_tau, int step,
                                   std::mt19937_64& rng) {
  return policy_loss_sacfd(batch, agent, cfg, bc_decay_tau, step,
                           normal_matrix(agent.act_dim, static_cast<int>(batch.size()), rng));
}

RVector ExpertPolicy::operator()(const RVector& obs) const {
  if (table.empty()) throw ContractViolation("ExpertPolicy: empty table");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < table.size(); ++i) {
    const double d = (table[i].first - obs).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return table[best].second;
}

DemoBuildResult build_pulse_demo(PulseEnv& env, const GrapeOptions& opts) {
  const GrapeResult res =
      grape_optimize(env.nominal(), env.initial_state(), env.target(), opts);
  const RVector action = encode_pulses(env.nominal(), res.pulses);
  const RVector obs = env.reset();
  const StepResult sr = env.step(action);

  Transition t;
  t.obs = obs;
  t.action = action;
  t.next_obs = sr.obs;
  t.reward = sr.reward;
  t.done = sr.done;
  t.true_fidelity = sr.true_fidelity;
  t.source = Source::Demo;

  DemoBuildResult out;
  out.demo = DemoBuffer({t});
  out.expert.table.push_back({obs, action});
  out.nominal_fidelity.push_back(res.fidelity);
  out.converged.push_back(res.reached_stop ? 1 : 0);
  return out;
}

DemoBuildResult build_ecd_demo(EcdEnv& env, std::uint64_t seed, int restarts, int iters) {
  const EcdDemoResult res =
      optimize_ecd_demo(env.n_q(), env.n_c(), env.target(), env.depth(), seed, restarts, iters);
  const RVector obs = env.reset();
  const StepResult sr = env.step(res.action);

  Transition t;
  t.obs = obs;
  t.action = res.action;
  t.next_obs = sr.obs;
  t.reward = sr.reward;
  t.done = sr.done;
  t.true_fidelity = sr.true_fidelity;
  t.source = Source::Demo;

  DemoBuildResult out;
  out.demo = DemoBuffer({t});
  out.expert.table.push_back({obs, res.action});
  out.nominal_fidelity.push_back(res.fidelity);
  out.converged.push_back(res.fidelity >= 0.99 ? 1 : 0);
  return out;
}

SacTrainResult train_sacfd(Env& env, const DemoBuffer& demo, const SacConfig& cfg,
                           int budget_episodes, std::uint64_t seed) {
  if (cfg.mu < 0.0 || cfg.mu > 1.0) throw ContractViolation("train_sacfd: mu outside [0, 1]");
  if (cfg.lambda_bc0 < 0.0) throw ContractViolation("train_sacfd: lambda_bc0 negative");

  const double bc_tau = cfg.bc_decay_tau > 0.0
                            ? cfg.bc_decay_tau
                            : std::max(1.0, 0.2 * static_cast<double>(budget_episodes));

  SacTrainResult out;
  out.agent = make_sac_agent(env.obs_dim(), env.action_dim(), cfg.hidden, mix_seed(seed, 10),
                          cfg.log_std_init);
  SacAgent& agent = out.agent;

  AdamState adam_q1, adam_q2, adam_pi;
  adam_q1.lr = adam_q2.lr = adam_pi.lr = cfg.lr;

  ReplayBuffer replay(cfg.replay_capacity);
  std::mt19937_64 rng_act(mix_seed(seed, 11));
  std::mt19937_64 rng_batch(mix_seed(seed, 12));
  std::mt19937_64 rng_train(mix_seed(seed, 13));

  // Clone the demonstration into the policy mean before spending any env
  // episode; the in-loop BC term then only has to hold position, not close
  // the full distance from a random initialization. log_std stays put.
  if (!demo.empty() && cfg.bc_warmup_iters > 0) {
    const int D = static_cast<int>(demo.size());
    RMatrix obs(agent.obs_dim, D), act(agent.act_dim, D);
    for (int d = 0; d < D; ++d) {
      obs.col(d) = demo.at(d).obs;
      act.col(d) = demo.at(d).action;
    }
    AdamState warm;
    warm.lr = cfg.bc_warmup_lr;
    for (int it = 0; it < cfg.bc_warmup_iters; ++it) {
      MlpNet::Cache cache;
      const RMatrix head = agent.actor.forward(obs, cache);
      const RMatrix tmean = head.topRows(agent.act_dim).array().tanh().matrix();
      RMatrix grad_y = RMatrix::Zero(2 * agent.act_dim, D);
      grad_y.topRows(agent.act_dim) =
          ((2.0 / D) * (tmean - act).array() * (1.0 - tmean.array().square())).matrix();
      std::vector<RMatrix> grads = agent.actor.zero_grads();
      agent.actor.backward(cache, grad_y, grads);
      adam_step(agent.actor.params(), grads, warm);
    }
  }

  std::deque<double> window;
  out.best_fidelity = 0.0;

  for (int e = 0; e < budget_episodes; ++e) {
    const RVector obs = env.reset();
    const GaussianPolicyOut po = actor_output(agent, obs);
    const SampleResult s = sample_squashed_gaussian(po, rng_act);
    const StepResult sr = env.step(s.action);

    Transition t;
    t.obs = obs;
    t.action = s.action;
    t.next_obs = sr.obs;
    t.reward = sr.reward;
    t.done = sr.done;
    t.true_fidelity = sr.true_fidelity;
    replay.push(std::move(t));

    window.push_back(sr.reward);
    if (window.size() > 100) window.pop_front();
    if (sr.true_fidelity > out.best_fidelity) {
      out.best_fidelity = sr.true_fidelity;
      out.best_action = s.action;
    }

    if ((e + 1) % cfg.env_steps_per_update != 0) continue;

    const double mu = demo.empty() ? 0.0 : cfg.mu;
    const auto batch = sample_mixed(replay, demo, cfg.batch, mu, rng_batch);

    const QLossResult ql = q_loss(batch, agent, cfg, rng_train);
    if (std::isnan(ql.loss)) {
      throw Error("train_sacfd: NaN critic loss at episode " + std::to_string(e + 1));
    }
    adam_step(agent.q1.params(), ql.grad_q1, adam_q1);
    adam_step(agent.q2.params(), ql.grad_q2, adam_q2);

    const PolicyLossResult pl = policy_loss_sacfd(batch, agent, cfg, bc_tau, e, rng_train);
    if (std::isnan(pl.loss)) {
      throw Error("train_sacfd: NaN policy loss at episode " + std::to_string(e + 1));
    }
    adam_step(agent.actor.params(), pl.grad_actor, adam_pi);

    agent.q1_target.polyak_from(agent.q1, cfg.tau);
    agent.q2_target.polyak_from(agent.q2, cfg.tau);

    SacMetricsRow row;
    row.timestep = e + 1;
    row.episodes = e + 1;
    double mean_r = 0.0;
    for (double r : window) mean_r += r;
    row.mean_reward = mean_r / static_cast<double>(window.size());
    row.best_fidelity = out.best_fidelity;
    row.q_loss = ql.loss;
    row.pi_loss = pl.loss;
    row.lambda_bc = pl.lambda_bc;
    out.trace.push_back(row);
  }
  return out;
}

}  // namespace qcrl
