#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "qcrl/config.hpp"

namespace qcrl {

inline constexpr double kFidelityThreshold = 0.995;

// Pulse-task system and target from the config (bell uses the two-qubit
// model, binomial/cat the transmon+cavity model). ECD tasks have no
// SystemSpec; make_system throws ContractViolation for them.
SystemSpec make_system(const ExperimentConfig& cfg);
QuantumState make_task_target(const ExperimentConfig& cfg);

// Environment for one run; the POVM stream is derived from `seed`.
std::unique_ptr<Env> make_env(const ExperimentConfig& cfg, std::uint64_t seed);

// PulseSet JSON: {"dt_ns": ..., "channels": [{"label", "values"}, ...]}.
// Serialization uses the shortest decimal that parses back exactly, so a
// round trip is lossless. Malformed input reports the byte offset; a missing
// or misshapen field names itself.
void save_pulses(const std::string& path, const PulseSet& pulses,
                 const std::vector<std::string>& labels);
struct LoadedPulses {
  PulseSet pulses;
  std::vector<std::string> labels;
};
LoadedPulses load_pulses(const std::string& path);

// ECD parameter JSON: {"n_q", "n_c", "layers": [{"beta_re", "beta_im",
// "theta", "phi"}, ...]}.
void save_ecd_params(const std::string& path, const EcdCircuitParams& params);
EcdCircuitParams load_ecd_params(const std::string& path);

// Demonstration for the configured task, optimized on the nominal model and
// measured once on env.
struct DemoArtifacts {
  DemoBuffer demo;
  RVector action;                  // encoded action, the buffer's single record
  double nominal_fidelity = 0.0;   // optimizer fidelity, unbiased model
  double biased_fidelity = 0.0;    // exact fidelity on env
};
DemoArtifacts make_demo(const ExperimentConfig& cfg, Env& env);

struct EvalStats {
  int episodes = 0;
  double mean_reward = 0.0;
  double var_reward = 0.0;  // population variance of the (possibly POVM) reward
  double mean_fidelity = 0.0;
  double min_fidelity = 0.0;
  double max_fidelity = 0.0;
};

// Repeated episodes of one deterministic policy.
EvalStats eval_policy(Env& env, const std::function<RVector(const RVector&)>& policy,
                      int episodes);

// Deterministic mean-action evaluation of a saved agent checkpoint. The
// expected net shapes come from the config; mismatches throw.
EvalStats eval_checkpoint(const std::string& prefix, const ExperimentConfig& cfg,
                          std::uint64_t seed, int episodes);

// A saved pulse file replayed as a constant policy.
EvalStats eval_saved_pulses(const std::string& path, const ExperimentConfig& cfg,
                            std::uint64_t seed, int episodes);

void save_sac_checkpoint(const std::string& prefix, const SacAgent& agent);
SacAgent load_sac_checkpoint(const std::string& prefix, int obs_dim, int act_dim,
                             const std::vector<int>& hidden);
void save_ppo_checkpoint(const std::string& prefix, const PpoAgent& agent);
PpoAgent load_ppo_checkpoint(const std::string& prefix, int obs_dim, int act_dim,
                             const std::vector<int>& hidden);

// Wigner samples of the cavity reduced state on a square grid, written as
// CSV (x, p, w).
void write_wigner_csv(const std::string& path, const ExperimentConfig& cfg,
                      const QuantumState& state, double extent = 4.0, int points = 81);

struct SeedResult {
  std::uint64_t seed = 0;
  long episodes_run = 0;
  double best_fidelity = 0.0;     // best true fidelity seen in training
  double final_fidelity = 0.0;    // deterministic end-policy (or demo) fidelity
  double demo_nominal_fidelity = -1.0;  // -1 when the algorithm takes no demo
  double demo_biased_fidelity = -1.0;
  long episodes_to_threshold = -1;  // first metrics row at kFidelityThreshold
  double wall_time_s = 0.0;
  std::string metrics_path;
};

// One seed end to end: demo (if the algorithm uses one), training, metrics
// CSV, best pulse/circuit JSON, Wigner CSV (cavity tasks) or final-state
// JSON (bell), agent checkpoint, summary JSON. budget 0 skips training and
// evaluates the demo alone.
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

struct ExperimentResult {
  std::vector<SeedResult> seeds;
  long median_episodes_to_threshold = -1;
  double median_final_fidelity = 0.0;
  std::string output_dir;
};

// All configured seeds (optionally one thread per seed), plus the resolved
// config copy and the cross-seed summary JSON.
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool parallel = false);

// Lower median; for episode counts, never-crossed (-1) sorts above any count.
long median_episodes(std::vector<long> values);
double median_value(std::vector<double> values);

}  // namespace qcrl
