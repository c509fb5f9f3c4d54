#pragma once

#include <string>
#include <vector>

#include "qcrl/qmath.hpp"

namespace qcrl {

// Two qubits coupled via a tunable coupler; sigma_x drives plus the coupling
// strength as controls. All rates angular, rad/ns.
//
// The frame keeps a common nonzero qubit frequency. At exact zero all three
// control Hamiltonians are real matrices, which pins the relative phase of
// reachable superpositions: |00>+|11> (with a +1 phase) is then unreachable
// from |00> (best overlap 1/2), while a finite splitting rotates that phase
// freely and the Bell state is reachable well within the amplitude bounds.
struct TwoQubitParams {
  double omega1 = mhz_to_radns(25.0);
  double omega2 = mhz_to_radns(25.0);
  double g_max = mhz_to_radns(20.0);
  double drive_max = mhz_to_radns(50.0);
};

// Dispersively coupled transmon + cavity with Kerr corrections. The qubit is
// kept as a bosonic mode (truncation n_q) so level leakage stays in the model.
struct KerrParams {
  double d_omega_c = 0.0;                    // cavity detuning, rad/ns
  double d_omega_q = 0.0;                    // qubit detuning, rad/ns
  double chi = mhz_to_radns(-2.2);           // cross-Kerr
  double e_c = mhz_to_radns(200.0);          // qubit anharmonicity
  double k_self = mhz_to_radns(-4.0e-3);     // cavity self-Kerr
  double chi_prime = 0.0;                    // higher-order cross-Kerr
  int n_q = 3;
  int n_c = 7;
  double cavity_drive_max = mhz_to_radns(3.0);
  double qubit_drive_max = mhz_to_radns(15.0);
};

struct ControlChannel {
  std::string label;
  CMatrix h;
  double lo = -1.0;  // amplitude bounds, rad/ns
  double hi = 1.0;
};

// A named drift term that a Hamiltonian-bias model may rescale
// (coupling / Kerr coefficients; bare detunings stay in drift_fixed).
struct DriftTerm {
  std::string label;
  CMatrix h;
};

struct SystemSpec {
  std::vector<int> dims;
  CMatrix drift_fixed;
  std::vector<DriftTerm> drift_scaled;
  std::vector<ControlChannel> controls;
  double dt_ns = 1.0;
  int n_segments = 1;

  int dim() const { return static_cast<int>(drift_fixed.rows()); }
  CMatrix drift() const;
};

SystemSpec build_two_qubit_system(const TwoQubitParams& p, int n_segments, double dt_ns);
SystemSpec build_kerr_system(const KerrParams& p, int n_segments, double dt_ns);

enum class TargetKind { Bell, Binomial, Cat, Gkp, Fock };

struct TargetSpec {
  TargetKind kind = TargetKind::Bell;
  double alpha = 2.0;    // cat
  double delta = 0.3;    // gkp envelope
  int fock_n = 1;
};

// Normalized target state on the given dims ([2,2] for bell, [n_q,n_c] or
// [n_c] for cavity states). Cat/GKP tails beyond the truncation are cut and
// renormalized; the lost weight is written to *truncated_weight when given.
QuantumState make_target(const TargetSpec& t, const std::vector<int>& dims,
                         double* truncated_weight = nullptr);

// Displacement exp(beta a^dag - beta^* a) and squeeze exp(r/2 (a^2 - a^dag^2))
// on an n-level truncated mode. Both are exactly unitary (exp of
// anti-Hermitian generators).
CMatrix displace(int n, Complex beta);
CMatrix squeeze(int n, double r);

// Photon parity diag((-1)^n).
CMatrix parity(int n);

// Trace out the qubit (first subsystem) of a [n_q, n_c] pure state.
CMatrix reduce_to_cavity_dm(const QuantumState& s);

struct PhasePoint {
  double x = 0.0;
  double p = 0.0;
};

// Displaced-parity Wigner function W(beta) = (2/pi) <D(beta) P D^dag(beta)>
// with beta = (x + i p)/sqrt(2). Values lie in [-2/pi, 2/pi].
std::vector<double> wigner(const QuantumState& cavity_state, const std::vector<PhasePoint>& grid);
std::vector<double> wigner_dm(const CMatrix& rho, const std::vector<PhasePoint>& grid);

double mean_photon_number(const QuantumState& cavity_state);

}  // namespace qcrl
