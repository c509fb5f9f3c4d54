#include "qcrl/model.hpp"

#include <cmath>

namespace qcrl {

CMatrix SystemSpec::drift() const {
  CMatrix h = drift_fixed;
  for (const auto& term : drift_scaled) h += term.h;
  return h;
}

SystemSpec build_two_qubit_system(const TwoQubitParams& p, int n_segments, double dt_ns) {
  if (n_segments < 1) throw DimensionError("build_two_qubit_system: n_segments < 1");
  const CMatrix i2 = identity(2);
  SystemSpec spec;
  spec.dims = {2, 2};
  spec.dt_ns = dt_ns;
  spec.n_segments = n_segments;
  spec.drift_fixed = 0.5 * p.omega1 * kron(sigma_z(), i2) + 0.5 * p.omega2 * kron(i2, sigma_z());

  const CMatrix exchange =
      kron(sigma_minus(), sigma_plus()) + kron(sigma_plus(), sigma_minus());
  spec.controls.push_back({"q1_x", kron(sigma_x(), i2), -p.drive_max, p.drive_max});
  spec.controls.push_back({"q2_x", kron(i2, sigma_x()), -p.drive_max, p.drive_max});
  spec.controls.push_back({"coupler_g", exchange, 0.0, p.g_max});
  return spec;
}

SystemSpec build_kerr_system(const KerrParams& p, int n_segments, double dt_ns) {
  if (p.n_q < 2 || p.n_c < 2) throw DimensionError("build_kerr_system: truncations must be >= 2");
  if (n_segments < 1) throw DimensionError("build_kerr_system: n_segments < 1");

  const CMatrix a = kron(identity(p.n_q), destroy(p.n_c));   // cavity
  const CMatrix b = kron(destroy(p.n_q), identity(p.n_c));   // qubit as bosonic mode
  const CMatrix ad = dagger(a);
  const CMatrix bd = dagger(b);
  const CMatrix na = ad * a;
  const CMatrix nb = bd * b;

  SystemSpec spec;
  spec.dims = {p.n_q, p.n_c};
  spec.dt_ns = dt_ns;
  spec.n_segments = n_segments;
  spec.drift_fixed = p.d_omega_c * na + p.d_omega_q * nb;
  spec.drift_scaled.push_back({"cross_kerr", p.chi * na * nb});
  spec.drift_scaled.push_back({"anharmonicity", -0.5 * p.e_c * bd * bd * b * b});
  spec.drift_scaled.push_back({"self_kerr", 0.5 * p.k_self * ad * ad * a * a});
  spec.drift_scaled.push_back({"higher_cross_kerr", 0.5 * p.chi_prime * ad * ad * a * a * nb});

  const Complex im(0.0, 1.0);
  spec.controls.push_back({"cavity_i", a + ad, -p.cavity_drive_max, p.cavity_drive_max});
  spec.controls.push_back({"cavity_q", im * (a - ad), -p.cavity_drive_max, p.cavity_drive_max});
  spec.controls.push_back({"qubit_i", b + bd, -p.qubit_drive_max, p.qubit_drive_max});
  spec.controls.push_back({"qubit_q", im * (b - bd), -p.qubit_drive_max, p.qubit_drive_max});
  return spec;
}

CMatrix displace(int n, Complex beta) {
  const CMatrix a = destroy(n);
  // exp(beta a^dag - beta^* a) = exp(-i h) with h = i(beta a^dag - beta^* a) Hermitian
  const CMatrix h = Complex(0.0, 1.0) * (beta * dagger(a) - std::conj(beta) * a);
  return propagator(h, 1.0);
}

CMatrix squeeze(int n, double r) {
  const CMatrix a = destroy(n);
  const CMatrix a2 = a * a;
  const CMatrix h = Complex(0.0, 1.0) * (0.5 * r) * (a2 - dagger(a2));
  return propagator(h, 1.0);
}

CMatrix parity(int n) {
  CMatrix p = CMatrix::Zero(n, n);
  for (int k = 0; k < n; ++k) p(k, k) = (k % 2 == 0) ? 1.0 : -1.0;
  return p;
}

namespace {

// Split [n_q, n_c] dims into (n_q, n_c); single-entry dims mean cavity only.
void cavity_layout(const std::vector<int>& dims, int* n_q, int* n_c) {
  if (dims.size() == 1) {
    *n_q = 1;
    *n_c = dims[0];
  } else if (dims.size() == 2) {
    *n_q = dims[0];
    *n_c = dims[1];
  } else {
    throw DimensionError("cavity target: dims must be [n_c] or [n_q, n_c]");
  }
}

// Embed cavity amplitudes with the qubit in its ground state.
QuantumState embed_cavity(const std::vector<int>& dims, const CVector& cavity) {
  int n_q = 1, n_c = 1;
  cavity_layout(dims, &n_q, &n_c);
  QuantumState s;
  s.dims = dims;
  s.amps = CVector::Zero(n_q * n_c);
  s.amps.head(n_c) = cavity;
  return s;
}

// Even cat Fock amplitudes on n_c levels; returns the weight lost to truncation.
CVector cat_amplitudes(double alpha, int n_c, double* lost_weight) {
  // |alpha> + |-alpha>, unnormalized coherent expansion; odd terms cancel and
  // even powers of a real alpha are non-negative.
  const double a2 = alpha * alpha;
  CVector c = CVector::Zero(n_c);
  double log_fact = 0.0;
  double truncated_norm2 = 0.0;
  for (int n = 0; n < n_c; ++n) {
    if (n > 0) log_fact += std::log(static_cast<double>(n));
    if (n % 2 != 0) continue;
    const double log_pow = (n == 0) ? 0.0 : 0.5 * n * std::log(a2);
    c(n) = 2.0 * std::exp(-0.5 * a2 + log_pow - 0.5 * log_fact);
    truncated_norm2 += std::norm(c(n));
  }
  const double full_norm2 = 2.0 * (1.0 + std::exp(-2.0 * a2));
  if (lost_weight) *lost_weight = 1.0 - truncated_norm2 / full_norm2;
  return c / std::sqrt(truncated_norm2);
}

// Finite-energy square-lattice GKP logical zero: displaced squeezed-vacuum
// grid components under the exp(-Delta^2 n) envelope, built on a large
// workspace and Fock-truncated at the end.
CVector gkp_amplitudes(double delta, int n_c, double* lost_weight) {
  const int n_work = 256;
  const double r = -std::log(delta);           // peak width Delta * vacuum width
  const double spacing = std::sqrt(kTwoPi);    // x-shift 2*sqrt(pi) per component

  const CMatrix sq = squeeze(n_work, r);
  CVector squeezed = sq.col(0);  // S(r)|0>

  RVector envelope(n_work);
  for (int n = 0; n < n_work; ++n) envelope(n) = std::exp(-delta * delta * n);

  CVector sum = squeezed;  // s = 0 component
  CVector prev_normalized;
  int max_s = 6;
  for (int s = 1; s <= max_s; ++s) {
    const CMatrix d_pos = displace(n_work, Complex(s * spacing, 0.0));
    sum += d_pos * squeezed + d_pos.adjoint() * squeezed;
    CVector damped = envelope.array() * sum.array();
    CVector normalized = damped / damped.norm();
    if (s > 1 && (normalized - prev_normalized).norm() < 1e-5) {
      prev_normalized = normalized;
      break;
    }
    prev_normalized = normalized;
  }
  CVector psi = prev_normalized;

  const double kept = psi.head(n_c).squaredNorm();
  if (lost_weight) *lost_weight = 1.0 - kept;
  return psi.head(n_c) / std::sqrt(kept);
}

}  // namespace

QuantumState make_target(const TargetSpec& t, const std::vector<int>& dims,
                         double* truncated_weight) {
  if (truncated_weight) *truncated_weight = 0.0;
  switch (t.kind) {
    case TargetKind::Bell: {
      if (dims != std::vector<int>{2, 2}) {
        throw DimensionError("bell target requires dims [2, 2]");
      }
      QuantumState s;
      s.dims = dims;
      s.amps = CVector::Zero(4);
      s.amps(0) = 1.0 / std::sqrt(2.0);
      s.amps(3) = 1.0 / std::sqrt(2.0);
      return s;
    }
    case TargetKind::Binomial: {
      int n_q = 1, n_c = 1;
      cavity_layout(dims, &n_q, &n_c);
      if (n_c < 5) throw TruncationError("binomial target (|0>+|4>)/sqrt(2) needs n_c >= 5");
      CVector cavity = CVector::Zero(n_c);
      cavity(0) = 1.0 / std::sqrt(2.0);
      cavity(4) = 1.0 / std::sqrt(2.0);
      return embed_cavity(dims, cavity);
    }
    case TargetKind::Cat: {
      int n_q = 1, n_c = 1;
      cavity_layout(dims, &n_q, &n_c);
      return embed_cavity(dims, cat_amplitudes(t.alpha, n_c, truncated_weight));
    }
    case TargetKind::Gkp: {
      int n_q = 1, n_c = 1;
      cavity_layout(dims, &n_q, &n_c);
      return embed_cavity(dims, gkp_amplitudes(t.delta, n_c, truncated_weight));
    }
    case TargetKind::Fock: {
      int n_q = 1, n_c = 1;
      cavity_layout(dims, &n_q, &n_c);
      if (t.fock_n < 0 || t.fock_n >= n_c) {
        throw TruncationError("fock target level outside cavity truncation");
      }
      CVector cavity = CVector::Zero(n_c);
      cavity(t.fock_n) = 1.0;
      return embed_cavity(dims, cavity);
    }
  }
  throw Error("make_target: unknown kind");
}

CMatrix reduce_to_cavity_dm(const QuantumState& s) {
  if (s.dims.size() != 2) {
    throw DimensionError("reduce_to_cavity_dm: expected dims [n_q, n_c]");
  }
  const int n_q = s.dims[0];
  const int n_c = s.dims[1];
  CMatrix rho = CMatrix::Zero(n_c, n_c);
  for (int q = 0; q < n_q; ++q) {
    const CVector block = s.amps.segment(q * n_c, n_c);
    rho += block * block.adjoint();
  }
  return rho;
}

std::vector<double> wigner(const QuantumState& cavity_state, const std::vector<PhasePoint>& grid) {
  if (cavity_state.dims.size() != 1) {
    throw DimensionError("wigner: expected a single-mode state; reduce the qubit first");
  }
  const int n = cavity_state.dim();
  std::vector<double> w;
  w.reserve(grid.size());
  const double scale = 2.0 / M_PI;
  for (const auto& pt : grid) {
    const Complex beta(pt.x / std::sqrt(2.0), pt.p / std::sqrt(2.0));
    const CVector phi = displace(n, -beta) * cavity_state.amps;
    double val = 0.0;
    for (int k = 0; k < n; ++k) {
      val += ((k % 2 == 0) ? 1.0 : -1.0) * std::norm(phi(k));
    }
    w.push_back(scale * val);
  }
  return w;
}

std::vector<double> wigner_dm(const CMatrix& rho, const std::vector<PhasePoint>& grid) {
  const int n = static_cast<int>(rho.rows());
  std::vector<double> w;
  w.reserve(grid.size());
  const double scale = 2.0 / M_PI;
  for (const auto& pt : grid) {
    const Complex beta(pt.x / std::sqrt(2.0), pt.p / std::sqrt(2.0));
    const CMatrix d = displace(n, -beta);
    const CMatrix m = d * rho * d.adjoint();
    double val = 0.0;
    for (int k = 0; k < n; ++k) {
      val += ((k % 2 == 0) ? 1.0 : -1.0) * m(k, k).real();
    }
    w.push_back(scale * val);
  }
  return w;
}

double mean_photon_number(const QuantumState& cavity_state) {
  if (cavity_state.dims.size() != 1) {
    throw DimensionError("mean_photon_number: expected a single-mode state");
  }
  double nbar = 0.0;
  for (int k = 0; k < cavity_state.dim(); ++k) {
    nbar += k * std::norm(cavity_state.amps(k));
  }
  return nbar;
}

}  // namespace qcrl
