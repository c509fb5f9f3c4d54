#include "qcrl/env.hpp"

#include <algorithm>
#include <cmath>

namespace qcrl {

namespace {

void require_finite(const RVector& action) {
  for (int i = 0; i < action.size(); ++i) {
    if (!std::isfinite(action(i))) throw ContractViolation("action contains NaN/inf");
  }
}

RMatrix apply_filter(const RMatrix& u, const FilterSpec& filter, double dt_ns) {
  switch (filter.kind) {
    case FilterSpec::Kind::None:
      return u;
    case FilterSpec::Kind::MovingAverage:
      return moving_average_filter(u, filter.window);
    case FilterSpec::Kind::Lowpass:
      return lowpass_filter(u, filter.cutoff_mhz, dt_ns);
  }
  throw Error("unknown filter kind");
}

}  // namespace

SystemSpec apply_bias(const SystemSpec& spec, const BiasModel& bias) {
  if (bias.level < 0.0 || bias.level > 0.3) {
    throw ContractViolation("bias level outside [0, 0.3]");
  }
  SystemSpec out = spec;
  if (bias.mode == BiasMode::None || bias.level == 0.0) return out;

  std::mt19937_64 rng(bias.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  auto factor = [&]() {
    if (bias.mode == BiasMode::DeterministicScale) return 1.0 + bias.level;
    return 1.0 + bias.level * uni(rng);
  };
  for (auto& ch : out.controls) ch.h *= factor();
  for (auto& term : out.drift_scaled) term.h *= factor();
  return out;
}

double povm_reward(double f, int shots, std::mt19937_64& rng) {
  if (shots < 1) throw ContractViolation("povm_reward: shots < 1");
  if (f < -1e-9 || f > 1.0 + 1e-9) throw ContractViolation("povm_reward: fidelity outside [0, 1]");
  const double p = std::clamp(f, 0.0, 1.0);
  std::binomial_distribution<int> bin(shots, p);
  return static_cast<double>(bin(rng)) / shots;
}

RVector encode_pulses(const SystemSpec& sys, const PulseSet& pulses) {
  check_pulse_shape(sys, pulses);
  const int n_seg = pulses.n_segments();
  RVector a(pulses.n_channels() * n_seg);
  for (int k = 0; k < pulses.n_channels(); ++k) {
    const auto& ch = sys.controls[k];
    for (int j = 0; j < n_seg; ++j) {
      a(k * n_seg + j) = 2.0 * (pulses.u(k, j) - ch.lo) / (ch.hi - ch.lo) - 1.0;
    }
  }
  return a;
}

PulseSet decode_action(const SystemSpec& sys, const RVector& action) {
  const int n_ch = static_cast<int>(sys.controls.size());
  const int n_seg = sys.n_segments;
  if (action.size() != n_ch * n_seg) {
    throw DimensionError("decode_action: action length != channels * segments");
  }
  PulseSet p = zero_pulses(sys);
  for (int k = 0; k < n_ch; ++k) {
    const auto& ch = sys.controls[k];
    for (int j = 0; j < n_seg; ++j) {
      p.u(k, j) = ch.lo + 0.5 * (action(k * n_seg + j) + 1.0) * (ch.hi - ch.lo);
    }
  }
  return p;
}

PulseEnv::PulseEnv(SystemSpec nominal, QuantumState psi0, QuantumState target, BiasModel bias,
                   EnvOptions opts)
    : nominal_(std::move(nominal)),
      biased_(apply_bias(nominal_, bias)),
      psi0_(std::move(psi0)),
      target_(std::move(target)),
      bias_(bias),
      opts_(opts),
      rng_(opts.seed) {
  if (psi0_.dim() != nominal_.dim() || target_.dim() != nominal_.dim()) {
    throw DimensionError("PulseEnv: state dims do not match the system");
  }
}

int PulseEnv::action_dim() const {
  return static_cast<int>(nominal_.controls.size()) * nominal_.n_segments;
}

RVector PulseEnv::reset() {
  RVector obs(1);
  obs(0) = 1.0;
  return obs;
}

QuantumState PulseEnv::final_state(const RVector& action) const {
  require_finite(action);
  PulseSet p = decode_action(biased_, action);
  p.u = apply_filter(p.u, bias_.filter, p.dt_ns);
  return propagate(biased_, p, psi0_);
}

StepResult PulseEnv::step(const RVector& action) {
  const QuantumState fin = final_state(action);
  StepResult res;
  res.obs = reset();
  res.done = true;
  res.true_fidelity = fidelity(fin, target_);
  res.reward = opts_.reward_mode == RewardMode::Exact
                   ? res.true_fidelity
                   : povm_reward(res.true_fidelity, opts_.shots, rng_);
  return res;
}

CMatrix ecd_unitary(Complex beta, int n_q, int n_c) {
  if (n_q < 2 || n_c < 2) throw DimensionError("ecd_unitary: need n_q >= 2 and n_c >= 2");
  CMatrix e_g = CMatrix::Zero(n_q, n_q);
  e_g(1, 0) = 1.0;
  CMatrix u = kron(e_g, displace(n_c, 0.5 * beta)) +
              kron(dagger(e_g), displace(n_c, -0.5 * beta));
  for (int k = 2; k < n_q; ++k) {
    CMatrix kk = CMatrix::Zero(n_q, n_q);
    kk(k, k) = 1.0;
    u += kron(kk, identity(n_c));
  }
  return u;
}

CMatrix qubit_rotation(double theta, double phi, int n_q, int n_c) {
  if (n_q < 2 || n_c < 1) throw DimensionError("qubit_rotation: need n_q >= 2");
  CMatrix h = CMatrix::Zero(n_q, n_q);
  const CMatrix axis = std::cos(phi) * sigma_x() + std::sin(phi) * sigma_y();
  h.topLeftCorner(2, 2) = 0.5 * theta * axis;
  return kron(propagator(h, 1.0), identity(n_c));
}

namespace {

// One (beta, theta) scale pair per layer, frozen by the bias seed.
std::vector<double> ecd_bias_factors(const BiasModel& bias, int depth) {
  std::vector<double> xi(2 * depth, 0.0);
  if (bias.mode == BiasMode::None || bias.level == 0.0) return xi;
  if (bias.mode == BiasMode::DeterministicScale) {
    std::fill(xi.begin(), xi.end(), 1.0);
    return xi;
  }
  std::mt19937_64 rng(bias.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (auto& v : xi) v = uni(rng);
  return xi;
}

void validate_ecd_params(const EcdCircuitParams& params) {
  for (const auto& l : params.layers) {
    if (!std::isfinite(l.beta_re) || !std::isfinite(l.beta_im) || !std::isfinite(l.theta) ||
        !std::isfinite(l.phi)) {
      throw ContractViolation("ecd params contain NaN/inf");
    }
    if (l.theta < -1e-9 || l.theta > M_PI + 1e-9) {
      throw ContractViolation("ecd theta outside [0, pi]");
    }
    if (l.phi < -M_PI - 1e-9 || l.phi > M_PI + 1e-9) {
      throw ContractViolation("ecd phi outside [-pi, pi]");
    }
  }
}

}  // namespace

QuantumState run_ecd_circuit(const EcdCircuitParams& params, const BiasModel& bias,
                             const QuantumState& psi0) {
  if (bias.level < 0.0 || bias.level > 0.25) {
    throw ContractViolation("gate bias level outside [0, 0.25]");
  }
  if (psi0.dims != std::vector<int>{params.n_q, params.n_c}) {
    throw DimensionError("run_ecd_circuit: psi0 dims do not match params");
  }
  validate_ecd_params(params);
  const auto xi = ecd_bias_factors(bias, params.depth());

  QuantumState psi = psi0;
  for (int i = 0; i < params.depth(); ++i) {
    const auto& l = params.layers[i];
    const double beta_scale = 1.0 + bias.level * xi[2 * i];
    const double theta_exec = l.theta * (1.0 + bias.level * xi[2 * i + 1]);
    const Complex beta_exec = beta_scale * Complex(l.beta_re, l.beta_im);
    psi.amps = qubit_rotation(theta_exec, l.phi, params.n_q, params.n_c) * psi.amps;
    psi.amps = ecd_unitary(beta_exec, params.n_q, params.n_c) * psi.amps;
  }
  return psi;
}

RVector encode_ecd_params(const EcdCircuitParams& params) {
  RVector a(4 * params.depth());
  for (int i = 0; i < params.depth(); ++i) {
    const auto& l = params.layers[i];
    a(4 * i + 0) = l.beta_re / kEcdBetaMax;
    a(4 * i + 1) = l.beta_im / kEcdBetaMax;
    a(4 * i + 2) = 2.0 * l.theta / M_PI - 1.0;
    a(4 * i + 3) = l.phi / M_PI;
  }
  return a;
}

EcdCircuitParams decode_ecd_action(int n_q, int n_c, const RVector& action) {
  if (action.size() % 4 != 0 || action.size() == 0) {
    throw DimensionError("decode_ecd_action: action length must be 4 * depth");
  }
  EcdCircuitParams params;
  params.n_q = n_q;
  params.n_c = n_c;
  params.layers.resize(action.size() / 4);
  for (int i = 0; i < params.depth(); ++i) {
    auto& l = params.layers[i];
    l.beta_re = kEcdBetaMax * action(4 * i + 0);
    l.beta_im = kEcdBetaMax * action(4 * i + 1);
    l.theta = 0.5 * (action(4 * i + 2) + 1.0) * M_PI;
    l.phi = M_PI * action(4 * i + 3);
  }
  return params;
}

EcdEnv::EcdEnv(int n_q, int n_c, QuantumState target, int depth, BiasModel bias, EnvOptions opts)
    : n_q_(n_q),
      n_c_(n_c),
      depth_(depth),
      psi0_(basis_state({n_q, n_c}, {0, 0})),
      target_(std::move(target)),
      bias_(bias),
      opts_(opts),
      rng_(opts.seed) {
  if (depth_ < 1) throw DimensionError("EcdEnv: depth < 1");
  if (target_.dim() != n_q_ * n_c_) throw DimensionError("EcdEnv: target dims mismatch");
  if (bias_.filter.kind != FilterSpec::Kind::None) {
    throw ContractViolation("EcdEnv: pulse filters do not apply to gate circuits");
  }
}

RVector EcdEnv::reset() {
  RVector obs(1);
  obs(0) = 1.0;
  return obs;
}

QuantumState EcdEnv::final_state(const RVector& action) const {
  require_finite(action);
  if (action.size() != 4 * depth_) throw DimensionError("EcdEnv: wrong action length");
  const EcdCircuitParams params = decode_ecd_action(n_q_, n_c_, action);
  return run_ecd_circuit(params, bias_, psi0_);
}

StepResult EcdEnv::step(const RVector& action) {
  const QuantumState fin = final_state(action);
  StepResult res;
  res.obs = reset();
  res.done = true;
  res.true_fidelity = fidelity(fin, target_);
  res.reward = opts_.reward_mode == RewardMode::Exact
                   ? res.true_fidelity
                   : povm_reward(res.true_fidelity, opts_.shots, rng_);
  return res;
}

EcdDemoResult optimize_ecd_demo(int n_q, int n_c, const QuantumState& target, int depth,
                                std::uint64_t seed, int restarts, int iters) {
  const QuantumState psi0 = basis_state({n_q, n_c}, {0, 0});
  const BiasModel nominal;  // unbiased circuit
  auto eval = [&](const RVector& a) {
    return fidelity(run_ecd_circuit(decode_ecd_action(n_q, n_c, a), nominal, psi0), target);
  };

  EcdDemoResult best;
  best.action = RVector::Zero(4 * depth);
  best.fidelity = eval(best.action);

  for (int r = 0; r < restarts; ++r) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * (r + 1)));
    std::uniform_real_distribution<double> uni(-0.35, 0.35);
    RVector a(4 * depth);
    for (int i = 0; i < a.size(); ++i) a(i) = uni(rng);
    double f = eval(a);

    const double eps = 1e-5;
    double step = 0.1;
    for (int it = 0; it < iters && f < 0.9999; ++it) {
      RVector g(a.size());
      for (int i = 0; i < a.size(); ++i) {
        RVector up = a, dn = a;
        up(i) = std::clamp(up(i) + eps, -1.0, 1.0);
        dn(i) = std::clamp(dn(i) - eps, -1.0, 1.0);
        g(i) = (eval(up) - eval(dn)) / (up(i) - dn(i));
      }
      const double gn = g.norm();
      if (gn < 1e-12) break;

      bool accepted = false;
      for (int bt = 0; bt < 25; ++bt) {
        RVector trial = a + (step / gn) * g;
        for (int i = 0; i < trial.size(); ++i) trial(i) = std::clamp(trial(i), -1.0, 1.0);
        const double ft = eval(trial);
        if (ft > f) {
          a = trial;
          f = ft;
          if (bt == 0) step *= 1.6;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
    }
    if (f > best.fidelity) {
      best.fidelity = f;
      best.action = a;
    }
  }
  return best;
}

}  // namespace qcrl
