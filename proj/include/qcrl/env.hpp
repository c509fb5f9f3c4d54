#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qcrl/dynamics.hpp"

namespace qcrl {

enum class BiasMode { None, DeterministicScale, RandomScale };

// Actuation-side distortion applied to decoded pulses; the agent never sees it.
struct FilterSpec {
  enum class Kind { None, MovingAverage, Lowpass };
  Kind kind = Kind::None;
  int window = 3;
  double cutoff_mhz = 62.5;
};

// Frozen model error: coefficient scaling plus an optional pulse filter.
// random_scale draws xi once per construction from `seed`.
struct BiasModel {
  BiasMode mode = BiasMode::None;
  double level = 0.0;
  std::uint64_t seed = 0;
  FilterSpec filter;
};

// Scale every control Hamiltonian and every scalable drift term by (1 + level)
// (deterministic_scale) or (1 + level * xi_i), xi_i ~ U[-1, 1] seeded
// (random_scale). Draw order: controls first, then drift terms.
SystemSpec apply_bias(const SystemSpec& spec, const BiasModel& bias);

enum class RewardMode { Exact, Povm };

// Binomial(shots, f) successes over shots.
double povm_reward(double f, int shots, std::mt19937_64& rng);

struct EnvOptions {
  RewardMode reward_mode = RewardMode::Exact;
  int shots = 1000;
  std::uint64_t seed = 0;  // POVM sampling stream
};

struct StepResult {
  RVector obs;
  double reward = 0.0;
  bool done = true;
  double true_fidelity = 0.0;  // exact fidelity, independent of reward mode
};

// Non-feedback episode protocol: reset gives the placeholder observation
// [1.0], one step consumes the whole action and terminates.
class Env {
 public:
  virtual ~Env() = default;
  virtual int obs_dim() const { return 1; }
  virtual int action_dim() const = 0;
  virtual RVector reset() = 0;
  virtual StepResult step(const RVector& action) = 0;
};

// Affine [-1,1] <-> [lo, hi] per channel, channel-major flattening.
RVector encode_pulses(const SystemSpec& sys, const PulseSet& pulses);
PulseSet decode_action(const SystemSpec& sys, const RVector& action);

class PulseEnv : public Env {
 public:
  PulseEnv(SystemSpec nominal, QuantumState psi0, QuantumState target, BiasModel bias,
           EnvOptions opts);

  int action_dim() const override;
  RVector reset() override;
  StepResult step(const RVector& action) override;

  const SystemSpec& nominal() const { return nominal_; }
  const SystemSpec& biased() const { return biased_; }
  const QuantumState& target() const { return target_; }
  const QuantumState& initial_state() const { return psi0_; }

  // Final state for a given action on the biased system (diagnostics/Wigner).
  QuantumState final_state(const RVector& action) const;

 private:
  SystemSpec nominal_;
  SystemSpec biased_;
  QuantumState psi0_;
  QuantumState target_;
  BiasModel bias_;
  EnvOptions opts_;
  std::mt19937_64 rng_;
};

// One circuit layer: qubit rotation R_phi(theta) followed by ECD(beta).
struct EcdLayer {
  double beta_re = 0.0;
  double beta_im = 0.0;
  double theta = 0.0;
  double phi = 0.0;
};

struct EcdCircuitParams {
  int n_q = 2;
  int n_c = 12;
  std::vector<EcdLayer> layers;

  int depth() const { return static_cast<int>(layers.size()); }
};

inline constexpr double kEcdBetaMax = 5.0;

// Echoed conditional displacement on qubit (x) cavity: |e><g| D(beta/2) +
// |g><e| D(-beta/2), identity on qubit levels above the first two. Exactly
// unitary because the truncated displacements are.
CMatrix ecd_unitary(Complex beta, int n_q, int n_c);

// exp(-i theta/2 (cos phi sx + sin phi sy)) on the two lowest qubit levels,
// identity elsewhere and on the cavity.
CMatrix qubit_rotation(double theta, double phi, int n_q, int n_c);

// Apply the circuit with gate-parameter bias: each executed beta and theta is
// scaled by (1 + level * xi); phi is unbiased. xi per layer (beta draw first,
// then theta) from bias.seed, or 1 for deterministic_scale.
QuantumState run_ecd_circuit(const EcdCircuitParams& params, const BiasModel& bias,
                             const QuantumState& psi0);

// Affine [-1,1]^{4 depth} <-> circuit parameters, layer-major
// (beta_re, beta_im, theta, phi).
RVector encode_ecd_params(const EcdCircuitParams& params);
EcdCircuitParams decode_ecd_action(int n_q, int n_c, const RVector& action);

class EcdEnv : public Env {
 public:
  EcdEnv(int n_q, int n_c, QuantumState target, int depth, BiasModel bias, EnvOptions opts);

  int action_dim() const override { return 4 * depth_; }
  RVector reset() override;
  StepResult step(const RVector& action) override;

  int n_q() const { return n_q_; }
  int n_c() const { return n_c_; }
  int depth() const { return depth_; }
  const QuantumState& target() const { return target_; }

  QuantumState final_state(const RVector& action) const;

 private:
  int n_q_;
  int n_c_;
  int depth_;
  QuantumState psi0_;
  QuantumState target_;
  BiasModel bias_;
  EnvOptions opts_;
  std::mt19937_64 rng_;
};

// Gate-task demo synthesis: seeded multi-restart finite-difference ascent of
// the exact fidelity on the unbiased circuit, in encoded action space.
struct EcdDemoResult {
  RVector action;
  double fidelity = 0.0;
};
EcdDemoResult optimize_ecd_demo(int n_q, int n_c, const QuantumState& target, int depth,
                                std::uint64_t seed, int restarts, int iters);

}  // namespace qcrl
