#pragma once

#include <Eigen/Dense>
#include <complex>
#include <vector>

#include "qcrl/errors.hpp"

namespace qcrl {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

// Units: hbar = 1, time in ns, all frequencies angular in rad/ns.
// A quoted frequency f in MHz enters as 2*pi*f*1e-3 rad/ns.
inline constexpr double kTwoPi = 6.283185307179586476925286766559;
inline double mhz_to_radns(double f_mhz) { return kTwoPi * f_mhz * 1e-3; }
inline double radns_to_mhz(double w_radns) { return w_radns * 1e3 / kTwoPi; }

// State vector over a truncated tensor-product Hilbert space.
// dims lists subsystem dimensions; amps has length prod(dims).
struct QuantumState {
  std::vector<int> dims;
  CVector amps;

  int dim() const { return static_cast<int>(amps.size()); }
  double norm() const { return amps.norm(); }
};

// Basis state |levels[0], levels[1], ...> with the first subsystem slowest.
QuantumState basis_state(const std::vector<int>& dims, const std::vector<int>& levels);

CMatrix kron(const CMatrix& a, const CMatrix& b);
CMatrix dagger(const CMatrix& a);

// Truncated annihilation operator: sqrt(m) at [m-1, m].
CMatrix destroy(int n);

bool is_hermitian(const CMatrix& a, double tol = 1e-10);

// U = exp(-i h dt) via Hermitian eigendecomposition; exact for piecewise-constant H.
// Throws ContractViolation if h is not Hermitian within 1e-10.
CMatrix propagator(const CMatrix& h, double dt_ns);

// Eigendecomposition reused by propagation and exact GRAPE derivatives.
struct HermitianEig {
  RVector eigvals;
  CMatrix eigvecs;  // columns
};
HermitianEig hermitian_eig(const CMatrix& h);

QuantumState normalize(const QuantumState& s);

CMatrix identity(int n);
CMatrix sigma_x();
CMatrix sigma_y();
CMatrix sigma_z();
CMatrix sigma_plus();   // |1><0| convention: raises |0> -> |1>
CMatrix sigma_minus();

}  // namespace qcrl
