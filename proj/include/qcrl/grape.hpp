#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "qcrl/dynamics.hpp"

namespace qcrl {

struct GrapeOptions {
  int max_iters = 500;
  double alpha0 = 1e-3;          // initial ascent step
  double stop_fidelity = 1.0;    // stop once fidelity reaches this
  double grad_tol = 1e-10;       // stop when max |grad| falls below
  int max_backtracks = 40;
  std::uint64_t seed = 0;
  double init_noise_frac = 0.01; // initial-pulse sigma as fraction of amp bound
};

struct GrapeResult {
  PulseSet pulses;
  double fidelity = 0.0;
  std::vector<double> fidelity_trace;  // one entry per accepted iterate
  int iterations = 0;
  bool reached_stop = false;           // hit stop_fidelity
};

// d/du exp(-i h dt) for each control channel, from one eigendecomposition of
// the segment Hamiltonian.
std::vector<CMatrix> segment_unitary_derivatives(const SystemSpec& sys, const CMatrix& h_segment,
                                                 double dt_ns);

// Fidelity J = |<target|psi_T>|^2 and its exact gradient dJ/du(k, j), using one
// forward and one backward pass (O(n_segments) propagations).
std::pair<double, RMatrix> grape_gradient(const SystemSpec& sys, const PulseSet& pulses,
                                          const QuantumState& psi0, const QuantumState& target);

// Seeded Gaussian pulse initialization, clamped to channel bounds.
PulseSet random_initial_pulses(const SystemSpec& sys, std::uint64_t seed, double noise_frac);

// Gradient ascent with backtracking line search; the fidelity trace is
// monotone non-decreasing. Stops at stop_fidelity, a vanished gradient, a
// failed line search, or max_iters.
GrapeResult grape_optimize(const SystemSpec& sys, const QuantumState& psi0,
                           const QuantumState& target, const GrapeOptions& opts);

}  // namespace qcrl
