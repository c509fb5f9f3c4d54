#include "qcrl/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace qcrl {

PulseSet zero_pulses(const SystemSpec& sys) {
  PulseSet p;
  p.u = RMatrix::Zero(static_cast<int>(sys.controls.size()), sys.n_segments);
  p.dt_ns = sys.dt_ns;
  return p;
}

void check_pulse_shape(const SystemSpec& sys, const PulseSet& pulses) {
  if (pulses.n_channels() != static_cast<int>(sys.controls.size()) ||
      pulses.n_segments() != sys.n_segments) {
    throw DimensionError("pulse shape does not match system channels/segments");
  }
}

PulseSet clamp_to_bounds(const SystemSpec& sys, const PulseSet& pulses) {
  check_pulse_shape(sys, pulses);
  PulseSet out = pulses;
  for (int k = 0; k < out.n_channels(); ++k) {
    const auto& ch = sys.controls[k];
    for (int j = 0; j < out.n_segments(); ++j) {
      out.u(k, j) = std::clamp(out.u(k, j), ch.lo, ch.hi);
    }
  }
  return out;
}

CMatrix segment_hamiltonian(const SystemSpec& sys, const PulseSet& pulses, int segment) {
  CMatrix h = sys.drift();
  for (int k = 0; k < pulses.n_channels(); ++k) {
    h += pulses.u(k, segment) * sys.controls[k].h;
  }
  return h;
}

std::vector<CMatrix> segment_unitaries(const SystemSpec& sys, const PulseSet& pulses) {
  check_pulse_shape(sys, pulses);
  std::vector<CMatrix> us;
  us.reserve(pulses.n_segments());
  for (int j = 0; j < pulses.n_segments(); ++j) {
    us.push_back(propagator(segment_hamiltonian(sys, pulses, j), pulses.dt_ns));
  }
  return us;
}

QuantumState propagate(const SystemSpec& sys, const PulseSet& pulses, const QuantumState& psi0) {
  check_pulse_shape(sys, pulses);
  if (psi0.dim() != sys.dim()) throw DimensionError("propagate: state dim != system dim");
  QuantumState out = psi0;
  for (int j = 0; j < pulses.n_segments(); ++j) {
    out.amps = propagator(segment_hamiltonian(sys, pulses, j), pulses.dt_ns) * out.amps;
  }
  return out;
}

std::vector<CVector> propagate_states(const SystemSpec& sys, const PulseSet& pulses,
                                      const QuantumState& psi0) {
  check_pulse_shape(sys, pulses);
  if (psi0.dim() != sys.dim()) throw DimensionError("propagate_states: state dim != system dim");
  std::vector<CVector> states;
  states.reserve(pulses.n_segments() + 1);
  states.push_back(psi0.amps);
  for (int j = 0; j < pulses.n_segments(); ++j) {
    states.push_back(propagator(segment_hamiltonian(sys, pulses, j), pulses.dt_ns) *
                     states.back());
  }
  return states;
}

QuantumState ground_state(const SystemSpec& sys) {
  return basis_state(sys.dims, std::vector<int>(sys.dims.size(), 0));
}

double fidelity(const QuantumState& a, const QuantumState& b) {
  if (a.dim() != b.dim()) throw DimensionError("fidelity: state dims differ");
  return std::norm(a.amps.dot(b.amps));
}

RMatrix moving_average_filter(const RMatrix& u, int width) {
  if (width < 1 || width % 2 == 0) {
    throw ContractViolation("moving_average_filter: width must be odd and >= 1");
  }
  const int n = static_cast<int>(u.cols());
  const int half = width / 2;
  RMatrix out(u.rows(), n);
  for (int k = 0; k < u.rows(); ++k) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int w = -half; w <= half; ++w) {
        acc += u(k, std::clamp(j + w, 0, n - 1));
      }
      out(k, j) = acc / width;
    }
  }
  return out;
}

RMatrix lowpass_filter(const RMatrix& u, double cutoff_mhz, double dt_ns) {
  const int n = static_cast<int>(u.cols());
  if (n == 0 || dt_ns <= 0.0) throw ContractViolation("lowpass_filter: need segments and dt > 0");
  const double cutoff_ghz = cutoff_mhz * 1e-3;  // 1/ns
  const double df = 1.0 / (n * dt_ns);

  // Keep-mask over DFT bins; bin m sits at m*df folded to [-1/(2dt), 1/(2dt)].
  std::vector<bool> keep(n);
  for (int m = 0; m < n; ++m) {
    const int folded = (m <= n / 2) ? m : m - n;
    keep[m] = std::abs(folded * df) <= cutoff_ghz + 1e-12;
  }

  RMatrix out(u.rows(), n);
  const Complex im(0.0, 1.0);
  std::vector<Complex> spectrum(n);
  for (int k = 0; k < u.rows(); ++k) {
    for (int m = 0; m < n; ++m) {
      Complex acc = 0.0;
      if (keep[m]) {
        for (int j = 0; j < n; ++j) {
          acc += u(k, j) * std::exp(-im * (kTwoPi * m * j / n));
        }
      }
      spectrum[m] = acc;
    }
    for (int j = 0; j < n; ++j) {
      Complex acc = 0.0;
      for (int m = 0; m < n; ++m) {
        if (keep[m]) acc += spectrum[m] * std::exp(im * (kTwoPi * m * j / n));
      }
      out(k, j) = acc.real() / n;
    }
  }
  return out;
}

}  // namespace qcrl
