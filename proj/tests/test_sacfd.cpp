#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "qcrl/model.hpp"
#include "qcrl/sacfd.hpp"

using namespace qcrl;

namespace {

RMatrix normal_mat(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  return RMatrix::NullaryExpr(rows, cols, [&]() { return gauss(rng); });
}

std::vector<Transition> synthetic_batch(int obs_dim, int act_dim, std::mt19937_64& rng) {
  std::vector<Transition> batch;
  for (int b = 0; b < 4; ++b) {
    Transition t;
    t.obs = normal_mat(obs_dim, 1, rng).col(0);
    t.action = normal_mat(act_dim, 1, rng).col(0).array().tanh().matrix();
    t.next_obs = normal_mat(obs_dim, 1, rng).col(0);
    t.reward = 0.25 * (b + 1);
    t.done = b % 2 == 0;
    t.source = b < 2 ? Source::Demo : Source::Agent;
    batch.push_back(t);
  }
  return batch;
}

// Zero every parameter, then pin the output bias so the net is the constant c.
void set_constant_output(MlpNet& net, double c) {
  auto params = net.params();
  for (RMatrix* p : params) p->setZero();
  (*params.back())(0, 0) = c;
}

void fd_check(std::vector<RMatrix*> params, const std::vector<RMatrix>& grads,
              const std::function<double()>& loss) {
  const double eps = 1e-6;
  REQUIRE(params.size() == grads.size());
  for (std::size_t blk = 0; blk < params.size(); ++blk) {
    RMatrix& p = *params[blk];
    for (int i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + eps;
      const double up = loss();
      p.data()[i] = saved - eps;
      const double dn = loss();
      p.data()[i] = saved;
      const double fd = (up - dn) / (2.0 * eps);
      CHECK(grads[blk].data()[i] == doctest::Approx(fd).epsilon(1e-4).scale(1e-4));
    }
  }
}

// Small deterministic single-step task: reward peaks at a fixed action.
class ToyEnv : public Env {
 public:
  explicit ToyEnv(RVector target_action) : target_(std::move(target_action)) {}

  int action_dim() const override { return static_cast<int>(target_.size()); }
  RVector reset() override { return RVector::Constant(1, 1.0); }
  StepResult step(const RVector& action) override {
    StepResult r;
    r.obs = RVector::Constant(1, 1.0);
    r.reward = 1.0 - (action - target_).squaredNorm() / (4.0 * target_.size());
    r.true_fidelity = r.reward;
    return r;
  }

 private:
  RVector target_;
};

class NanEnv : public Env {
 public:
  int action_dim() const override { return 2; }
  RVector reset() override { return RVector::Constant(1, 1.0); }
  StepResult step(const RVector&) override {
    StepResult r;
    r.obs = RVector::Constant(1, 1.0);
    r.reward = std::nan("");
    r.true_fidelity = 0.0;
    return r;
  }
};

}  // namespace

TEST_CASE("critic loss matches its closed forms on constant networks") {
  SacAgent agent = make_sac_agent(2, 3, {4}, 1);
  SacConfig cfg;

  std::vector<Transition> batch;
  for (int b = 0; b < 3; ++b) {
    Transition t;
    t.obs = RVector::Zero(2);
    t.action = RVector::Zero(3);
    t.next_obs = RVector::Zero(2);
    t.reward = 1.0;
    t.done = true;
    batch.push_back(t);
  }
  const RMatrix zeta = RMatrix::Zero(3, 3);

  set_constant_output(agent.q1, 0.0);
  set_constant_output(agent.q2, 0.0);
  CHECK(q_loss(batch, agent, cfg, zeta).loss == doctest::Approx(0.5).epsilon(1e-14));

  set_constant_output(agent.q1, 1.0);
  set_constant_output(agent.q2, 1.0);
  CHECK(q_loss(batch, agent, cfg, zeta).loss == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
}

TEST_CASE("bootstrapped critic target uses the minimum of the target critics") {
  SacAgent agent = make_sac_agent(2, 3, {4}, 2);
  SacConfig cfg;
  cfg.alpha = 0.0;  // strip the entropy term so the target is r + gamma min
  cfg.gamma = 0.9;

  set_constant_output(agent.q1, 0.0);
  set_constant_output(agent.q2, 0.0);
  set_constant_output(agent.q1_target, 0.7);
  set_constant_output(agent.q2_target, 0.4);

  Transition t;
  t.obs = RVector::Zero(2);
  t.action = RVector::Zero(3);
  t.next_obs = RVector::Zero(2);
  t.reward = 0.2;
  t.done = false;
  const RMatrix zeta = RMatrix::Zero(3, 1);

  const double y = 0.2 + 0.9 * 0.4;
  CHECK(q_loss({t}, agent, cfg, zeta).loss == doctest::Approx(0.5 * y * y).epsilon(1e-13));

  // Swapping which target is smaller must not change the result.
  set_constant_output(agent.q1_target, 0.4);
  set_constant_output(agent.q2_target, 0.7);
  CHECK(q_loss({t}, agent, cfg, zeta).loss == doctest::Approx(0.5 * y * y).epsilon(1e-13));
}

TEST_CASE("critic gradients match finite differences") {
  SacAgent agent = make_sac_agent(2, 3, {8}, 3);
  SacConfig cfg;
  std::mt19937_64 rng(4);
  const auto batch = synthetic_batch(2, 3, rng);
  const RMatrix zeta = normal_mat(3, 4, rng);

  const QLossResult res = q_loss(batch, agent, cfg, zeta);
  fd_check(agent.q1.params(), res.grad_q1,
           [&]() { return q_loss(batch, agent, cfg, zeta).loss; });
  fd_check(agent.q2.params(), res.grad_q2,
           [&]() { return q_loss(batch, agent, cfg, zeta).loss; });
}

TEST_CASE("policy gradients match finite differences") {
  SacAgent agent = make_sac_agent(2, 3, {8}, 5);
  SacConfig cfg;
  cfg.alpha = 0.2;
  std::mt19937_64 rng(6);
  const auto batch = synthetic_batch(2, 3, rng);
  const RMatrix zeta = normal_mat(3, 4, rng);

  SUBCASE("with the behavior-cloning term active") {
    const double tau = 50.0;
    const PolicyLossResult res = policy_loss_sacfd(batch, agent, cfg, tau, 3, zeta);
    CHECK(res.lambda_bc == doctest::Approx(2.0 * std::exp(-3.0 / 50.0)).epsilon(1e-13));
    fd_check(agent.actor.params(), res.grad_actor,
             [&]() { return policy_loss_sacfd(batch, agent, cfg, tau, 3, zeta).loss; });
  }

  SUBCASE("plain actor loss once the cloning weight has decayed away") {
    cfg.lambda_bc0 = 0.0;
    const PolicyLossResult res = policy_loss_sacfd(batch, agent, cfg, 50.0, 0, zeta);
    CHECK(res.lambda_bc == 0.0);
    fd_check(agent.actor.params(), res.grad_actor,
             [&]() { return policy_loss_sacfd(batch, agent, cfg, 50.0, 0, zeta).loss; });
  }
}

TEST_CASE("behavior cloning term vanishes when the policy mean hits the demo action") {
  SacAgent agent = make_sac_agent(1, 2, {4}, 7);
  for (RMatrix* p : agent.actor.params()) p->setZero();  // mean = 0, tanh(0) = 0
  SacConfig cfg;

  Transition t;
  t.obs = RVector::Constant(1, 1.0);
  t.action = RVector::Zero(2);
  t.next_obs = t.obs;
  t.reward = 1.0;
  t.source = Source::Demo;
  const RMatrix zeta = RMatrix::Zero(2, 1);

  const PolicyLossResult res = policy_loss_sacfd({t}, agent, cfg, 100.0, 0, zeta);
  CHECK(res.bc_term == 0.0);
  CHECK(res.lambda_bc == doctest::Approx(2.0).epsilon(1e-14));

  CHECK(sac_mean_action(agent, t.obs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cloning weight decays exponentially from two") {
  SacConfig cfg;
  CHECK(lambda_bc_at(cfg, 200.0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(lambda_bc_at(cfg, 200.0, 200) == doctest::Approx(2.0 / std::exp(1.0)).epsilon(1e-13));
  double prev = lambda_bc_at(cfg, 200.0, 0);
  for (int step : {1, 5, 50, 500, 5000}) {
    const double cur = lambda_bc_at(cfg, 200.0, step);
    CHECK(cur < prev);
    CHECK(cur <= 2.0);
    prev = cur;
  }
}

TEST_CASE("pulse demos come from the nominal model and replay stays disjoint") {
  const SystemSpec sys = build_two_qubit_system({}, 50, 2.0);
  const QuantumState psi0 = ground_state(sys);
  const QuantumState target = make_target({TargetKind::Bell}, {2, 2});

  BiasModel bias;  // unbiased environment first
  PulseEnv env(sys, psi0, target, bias, {});

  GrapeOptions opts;
  opts.stop_fidelity = 0.999;
  opts.seed = 2;
  const DemoBuildResult built = build_pulse_demo(env, opts);

  REQUIRE(built.demo.size() == 1);
  CHECK(built.converged[0] == 1);
  CHECK(built.nominal_fidelity[0] >= 0.999);
  // Unbiased env: the stored reward is the exact fidelity of the demo pulses.
  CHECK(built.demo.at(0).reward == doctest::Approx(built.nominal_fidelity[0]).epsilon(1e-9));
  CHECK(built.demo.at(0).source == Source::Demo);
  CHECK(built.demo.at(0).action.cwiseAbs().maxCoeff() <= 1.0);

  const RVector looked_up = built.expert(env.reset());
  CHECK((looked_up - built.demo.at(0).action).cwiseAbs().maxCoeff() == 0.0);

  ReplayBuffer replay(8);
  CHECK_THROWS_AS(replay.push(built.demo.at(0)), ContractViolation);
}

TEST_CASE("training on a toy task tracks the demonstration and is deterministic") {
  RVector star(2);
  star << 0.3, -0.4;

  Transition demo_rec;
  demo_rec.obs = RVector::Constant(1, 1.0);
  demo_rec.action = star;
  demo_rec.next_obs = demo_rec.obs;
  demo_rec.reward = 1.0;
  demo_rec.true_fidelity = 1.0;
  DemoBuffer demo({demo_rec});

  SacConfig cfg;
  cfg.hidden = {16, 16};
  cfg.batch = 32;
  cfg.alpha = 0.01;
  cfg.lr = 1e-2;

  ToyEnv env(star);
  const SacTrainResult run = train_sacfd(env, demo, cfg, 300, 9);
  REQUIRE(run.trace.size() == 300);
  CHECK(run.best_fidelity > 0.95);
  CHECK(run.trace.back().best_fidelity == run.best_fidelity);
  CHECK(run.trace.front().lambda_bc > run.trace.back().lambda_bc);
  // The mean action should have been pulled close to the demonstrated one.
  const RVector mean_act = sac_mean_action(run.agent, env.reset());
  CHECK((mean_act - star).cwiseAbs().maxCoeff() < 0.25);

  ToyEnv env2(star);
  const SacTrainResult rerun = train_sacfd(env2, demo, cfg, 300, 9);
  REQUIRE(rerun.trace.size() == run.trace.size());
  for (std::size_t i = 0; i < run.trace.size(); ++i) {
    CHECK(run.trace[i].mean_reward == rerun.trace[i].mean_reward);
    CHECK(run.trace[i].q_loss == rerun.trace[i].q_loss);
    CHECK(run.trace[i].pi_loss == rerun.trace[i].pi_loss);
  }

  ToyEnv env3(star);
  const SacTrainResult other = train_sacfd(env3, demo, cfg, 300, 10);
  CHECK(other.trace.back().pi_loss != run.trace.back().pi_loss);
}

TEST_CASE("from-scratch training works without any demonstrations") {
  RVector star(2);
  star << 0.2, 0.1;
  ToyEnv env(star);

  SacConfig cfg;
  cfg.hidden = {8, 8};
  cfg.batch = 16;
  cfg.mu = 0.0;
  cfg.lambda_bc0 = 0.0;
  cfg.alpha = 0.01;

  const SacTrainResult run = train_sacfd(env, DemoBuffer(), cfg, 40, 3);
  REQUIRE(run.trace.size() == 40);
  CHECK(run.trace.back().lambda_bc == 0.0);
  CHECK(run.best_fidelity > 0.0);
}

TEST_CASE("a NaN reward aborts training with a diagnostic") {
  NanEnv env;
  SacConfig cfg;
  cfg.hidden = {4};
  cfg.batch = 4;
  CHECK_THROWS_AS(train_sacfd(env, DemoBuffer(), cfg, 5, 1), Error);
}
