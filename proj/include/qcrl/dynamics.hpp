#pragma once

#include <vector>

#include "qcrl/model.hpp"

namespace qcrl {

// Piecewise-constant control amplitudes, u(k, j) = channel k during segment j,
// in the same rad/ns units as the channel Hamiltonians.
struct PulseSet {
  RMatrix u;
  double dt_ns = 1.0;

  int n_channels() const { return static_cast<int>(u.rows()); }
  int n_segments() const { return static_cast<int>(u.cols()); }
};

// Zero pulses shaped for sys.
PulseSet zero_pulses(const SystemSpec& sys);

// Check pulse shape against the system; throws DimensionError on mismatch.
void check_pulse_shape(const SystemSpec& sys, const PulseSet& pulses);

// Clamp each channel row into its [lo, hi] amplitude bounds.
PulseSet clamp_to_bounds(const SystemSpec& sys, const PulseSet& pulses);

// Segment Hamiltonian H_j = H_drift + sum_k u(k,j) H_k.
CMatrix segment_hamiltonian(const SystemSpec& sys, const PulseSet& pulses, int segment);

// One exp(-i H_j dt) per segment.
std::vector<CMatrix> segment_unitaries(const SystemSpec& sys, const PulseSet& pulses);

// Final state after all segments.
QuantumState propagate(const SystemSpec& sys, const PulseSet& pulses, const QuantumState& psi0);

// All intermediate states psi_0 .. psi_N (N+1 entries), for gradient passes.
std::vector<CVector> propagate_states(const SystemSpec& sys, const PulseSet& pulses,
                                      const QuantumState& psi0);

// Ground state |0...0> of the system.
QuantumState ground_state(const SystemSpec& sys);

// |<a|b>|^2.
double fidelity(const QuantumState& a, const QuantumState& b);

// Centered moving average per channel row, odd width, edges replicate-padded.
// width 1 is the identity.
RMatrix moving_average_filter(const RMatrix& u, int width);

// Brick-wall lowpass per channel row: DFT, zero every bin with |f| strictly
// above cutoff_mhz, inverse DFT. cutoff at or above Nyquist = 1/(2 dt) leaves
// the input unchanged.
RMatrix lowpass_filter(const RMatrix& u, double cutoff_mhz, double dt_ns);

}  // namespace qcrl
