#include "qcrl/qmath.hpp"

#include <cmath>

namespace qcrl {

QuantumState basis_state(const std::vector<int>& dims, const std::vector<int>& levels) {
  if (dims.size() != levels.size()) {
    throw DimensionError("basis_state: dims/levels size mismatch");
  }
  int total = 1;
  int index = 0;
  for (size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] < 1 || levels[k] < 0 || levels[k] >= dims[k]) {
      throw DimensionError("basis_state: level outside subsystem dimension");
    }
    index = index * dims[k] + levels[k];
    total *= dims[k];
  }
  QuantumState s;
  s.dims = dims;
  s.amps = CVector::Zero(total);
  s.amps(index) = 1.0;
  return s;
}

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  if (a.size() == 0 || b.size() == 0) {
    throw DimensionError("kron: empty operand");
  }
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

CMatrix dagger(const CMatrix& a) { return a.adjoint(); }

CMatrix destroy(int n) {
  if (n < 2) {
    throw DimensionError("destroy: dimension must be >= 2");
  }
  CMatrix a = CMatrix::Zero(n, n);
  for (int m = 1; m < n; ++m) {
    a(m - 1, m) = std::sqrt(static_cast<double>(m));
  }
  return a;
}

bool is_hermitian(const CMatrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  return (a - a.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

HermitianEig hermitian_eig(const CMatrix& h) {
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(h);
  if (solver.info() != Eigen::Success) {
    throw Error("hermitian_eig: eigensolver failed");
  }
  return HermitianEig{solver.eigenvalues(), solver.eigenvectors()};
}

CMatrix propagator(const CMatrix& h, double dt_ns) {
  if (!is_hermitian(h, 1e-10)) {
    throw ContractViolation("propagator: input is not Hermitian within 1e-10");
  }
  const HermitianEig eig = hermitian_eig(h);
  const Eigen::Index n = h.rows();
  CVector phases(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    phases(i) = std::exp(Complex(0.0, -eig.eigvals(i) * dt_ns));
  }
  return eig.eigvecs * phases.asDiagonal() * eig.eigvecs.adjoint();
}

QuantumState normalize(const QuantumState& s) {
  const double n = s.norm();
  if (n <= 1e-14) {
    throw DegenerateStateError("normalize: state norm below 1e-14");
  }
  QuantumState out = s;
  out.amps /= n;
  return out;
}

CMatrix identity(int n) { return CMatrix::Identity(n, n); }

CMatrix sigma_x() {
  CMatrix m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

CMatrix sigma_y() {
  CMatrix m(2, 2);
  m << Complex(0, 0), Complex(0, -1), Complex(0, 1), Complex(0, 0);
  return m;
}

CMatrix sigma_z() {
  CMatrix m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

CMatrix sigma_plus() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(1, 0) = 1.0;
  return m;
}

CMatrix sigma_minus() {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 1) = 1.0;
  return m;
}

}  // namespace qcrl
