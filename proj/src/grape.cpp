#include "qcrl/grape.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace qcrl {

namespace {

// Divided differences of f(l) = exp(-i l dt) over the eigenvalues; the
// Hadamard product of this with a rotated control Hamiltonian gives the exact
// segment-unitary derivative. Near-degenerate pairs take the limit f'(l).
CMatrix loewner_matrix(const RVector& eigvals, double dt_ns) {
  const int d = static_cast<int>(eigvals.size());
  const Complex im(0.0, 1.0);
  CMatrix f(d, d);
  for (int p = 0; p < d; ++p) {
    for (int q = 0; q < d; ++q) {
      const double diff = eigvals(p) - eigvals(q);
      if (std::abs(diff) * dt_ns < 1e-7) {
        const double mid = 0.5 * (eigvals(p) + eigvals(q));
        f(p, q) = -im * dt_ns * std::exp(-im * mid * dt_ns);
      } else {
        f(p, q) = (std::exp(-im * eigvals(p) * dt_ns) - std::exp(-im * eigvals(q) * dt_ns)) / diff;
      }
    }
  }
  return f;
}

}  // namespace

std::vector<CMatrix> segment_unitary_derivatives(const SystemSpec& sys, const CMatrix& h_segment,
                                                 double dt_ns) {
  const HermitianEig eig = hermitian_eig(h_segment);
  const CMatrix f = loewner_matrix(eig.eigvals, dt_ns);
  std::vector<CMatrix> derivs;
  derivs.reserve(sys.controls.size());
  for (const auto& ch : sys.controls) {
    const CMatrix rotated = eig.eigvecs.adjoint() * ch.h * eig.eigvecs;
    derivs.push_back(eig.eigvecs * f.cwiseProduct(rotated) * eig.eigvecs.adjoint());
  }
  return derivs;
}

std::pair<double, RMatrix> grape_gradient(const SystemSpec& sys, const PulseSet& pulses,
                                          const QuantumState& psi0, const QuantumState& target) {
  check_pulse_shape(sys, pulses);
  if (psi0.dim() != sys.dim() || target.dim() != sys.dim()) {
    throw DimensionError("grape_gradient: state dim != system dim");
  }
  const int n_seg = pulses.n_segments();
  const int n_ch = pulses.n_channels();
  const Complex im(0.0, 1.0);

  // Eigendecompose every segment once; reused for U_j and dU_j/du.
  std::vector<HermitianEig> eigs;
  eigs.reserve(n_seg);
  std::vector<CMatrix> unitaries;
  unitaries.reserve(n_seg);
  for (int j = 0; j < n_seg; ++j) {
    eigs.push_back(hermitian_eig(segment_hamiltonian(sys, pulses, j)));
    const auto& e = eigs.back();
    CVector phases(e.eigvals.size());
    for (int p = 0; p < e.eigvals.size(); ++p) {
      phases(p) = std::exp(-im * e.eigvals(p) * pulses.dt_ns);
    }
    unitaries.push_back(e.eigvecs * phases.asDiagonal() * e.eigvecs.adjoint());
  }

  // Forward states s_j (before segment j) and final overlap.
  std::vector<CVector> fwd(n_seg + 1);
  fwd[0] = psi0.amps;
  for (int j = 0; j < n_seg; ++j) fwd[j + 1] = unitaries[j] * fwd[j];
  const Complex z = target.amps.dot(fwd[n_seg]);

  // Backward co-states c_j = (U_{n-1} ... U_{j+1})^dag |target>.
  RMatrix grad(n_ch, n_seg);
  CVector costate = target.amps;
  for (int j = n_seg - 1; j >= 0; --j) {
    const auto& e = eigs[j];
    const CMatrix f = loewner_matrix(e.eigvals, pulses.dt_ns);
    const CVector vc = e.eigvecs.adjoint() * costate;
    const CVector vs = e.eigvecs.adjoint() * fwd[j];
    for (int k = 0; k < n_ch; ++k) {
      const CMatrix rotated = e.eigvecs.adjoint() * sys.controls[k].h * e.eigvecs;
      const Complex dz = vc.dot(f.cwiseProduct(rotated) * vs);
      grad(k, j) = 2.0 * std::real(std::conj(z) * dz);
    }
    costate = unitaries[j].adjoint() * costate;
  }
  return {std::norm(z), grad};
}

PulseSet random_initial_pulses(const SystemSpec& sys, std::uint64_t seed, double noise_frac) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PulseSet p = zero_pulses(sys);
  for (int k = 0; k < p.n_channels(); ++k) {
    const auto& ch = sys.controls[k];
    const double sigma = noise_frac * std::max(std::abs(ch.lo), std::abs(ch.hi));
    for (int j = 0; j < p.n_segments(); ++j) {
      p.u(k, j) = std::clamp(sigma * gauss(rng), ch.lo, ch.hi);
    }
  }
  return p;
}

GrapeResult grape_optimize(const SystemSpec& sys, const QuantumState& psi0,
                           const QuantumState& target, const GrapeOptions& opts) {
  GrapeResult res;
  res.pulses = random_initial_pulses(sys, opts.seed, opts.init_noise_frac);

  auto [j_cur, grad] = grape_gradient(sys, res.pulses, psi0, target);
  res.fidelity_trace.push_back(j_cur);
  double alpha = opts.alpha0;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    if (j_cur >= opts.stop_fidelity) {
      res.reached_stop = true;
      break;
    }
    const double gmax = grad.cwiseAbs().maxCoeff();
    if (gmax < opts.grad_tol) break;

    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      PulseSet trial = res.pulses;
      trial.u += alpha * grad;
      trial = clamp_to_bounds(sys, trial);
      const double j_trial = fidelity(propagate(sys, trial, psi0), target);
      if (j_trial > j_cur) {
        res.pulses = trial;
        j_cur = j_trial;
        res.fidelity_trace.push_back(j_cur);
        if (bt == 0) alpha *= 2.0;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;

    std::tie(j_cur, grad) = grape_gradient(sys, res.pulses, psi0, target);
    j_cur = res.fidelity_trace.back();  // identical propagation, keep the trace value
  }
  res.fidelity = j_cur;
  res.iterations = static_cast<int>(res.fidelity_trace.size()) - 1;
  if (j_cur >= opts.stop_fidelity) res.reached_stop = true;
  return res;
}

}  // namespace qcrl
