#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

#include "pilotwave/grid.hpp"

namespace pilotwave {

using ApplyFn = std::function<cvec(const cvec&)>;

// Inner products carry optional per-component weights: compound states
// (e.g. a scalar sector next to gridded sectors) are not uniformly weighted.
inline cplx weighted_dot(const cvec& f, const cvec& g, const std::vector<double>* w = nullptr) {
  if (f.size() != g.size()) throw ShapeError("dot size mismatch");
  cplx s(0.0);
  if (w) {
    if (w->size() != f.size()) throw ShapeError("weight size mismatch");
    for (std::size_t i = 0; i < f.size(); ++i) s += (*w)[i] * std::conj(f[i]) * g[i];
  } else {
    for (std::size_t i = 0; i < f.size(); ++i) s += std::conj(f[i]) * g[i];
  }
  return s;
}

inline double weighted_norm(const cvec& f, const std::vector<double>* w = nullptr) {
  return std::sqrt(std::abs(weighted_dot(f, f, w).real()));
}

// max over sampled pairs of |<f,Hg> - <Hf,g>| / (|f| |g| |H|_sample);
// |H|_sample = max |Hf|/|f| over the sample.
inline double symmetry_residual(const ApplyFn& apply, const std::vector<cvec>& basis,
                                const std::vector<double>* w = nullptr) {
  if (basis.empty()) throw ArgumentError("symmetry_residual needs a nonempty sample");
  std::vector<cvec> hf(basis.size());
  double hnorm = 0.0;
  std::vector<double> norms(basis.size());
  for (std::size_t i = 0; i < basis.size(); ++i) {
    hf[i] = apply(basis[i]);
    norms[i] = weighted_norm(basis[i], w);
    if (norms[i] == 0.0) throw ArgumentError("zero vector in sample");
    hnorm = std::max(hnorm, weighted_norm(hf[i], w) / norms[i]);
  }
  if (hnorm == 0.0) return 0.0;  // H = 0 is trivially symmetric
  double worst = 0.0;
  for (std::size_t i = 0; i < basis.size(); ++i)
    for (std::size_t j = i; j < basis.size(); ++j) {
      const cplx a = weighted_dot(basis[i], hf[j], w);
      const cplx b = weighted_dot(hf[i], basis[j], w);
      worst = std::max(worst, std::abs(a - b) / (norms[i] * norms[j] * hnorm));
    }
  return worst;
}

// Conjugate gradients for Hermitian positive-definite apply under the weighted
// inner product. Tolerance is on the relative residual.
inline cvec cg_solve(const ApplyFn& apply_spd, const cvec& b, double tol, int max_iter,
                     const std::vector<double>* w = nullptr) {
  const std::size_t n = b.size();
  cvec x(n, cplx(0.0)), r = b, p = r, ap;
  double rr = std::abs(weighted_dot(r, r, w).real());
  const double b2 = rr;
  if (b2 == 0.0) return x;
  for (int it = 0; it < max_iter; ++it) {
    ap = apply_spd(p);
    const double pap = weighted_dot(p, ap, w).real();
    if (!(pap > 0.0)) throw ConvergenceError("CG: operator not positive definite on iterate");
    const double alpha = rr / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rr2 = std::abs(weighted_dot(r, r, w).real());
    if (rr2 <= tol * tol * b2) return x;
    const double beta = rr2 / rr;
    rr = rr2;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  throw ConvergenceError("CG did not converge");
}

// Dense matrix of a linear operator by probing unit vectors (column j = A e_j).
inline Eigen::MatrixXcd dense_from_apply(const ApplyFn& apply, std::size_t n) {
  Eigen::MatrixXcd mat(n, n);
  cvec e(n, cplx(0.0));
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = cplx(1.0);
    cvec col = apply(e);
    if (col.size() != n) throw ShapeError("apply changed vector size");
    for (std::size_t i = 0; i < n; ++i) mat(i, j) = col[i];
    e[j] = cplx(0.0);
  }
  return mat;
}

struct EigenSystem {
  std::vector<double> values;             // ascending
  std::vector<cvec> vectors;              // in the original (unweighted) coordinates
  double max_imaginary = 0.0;             // largest |Im| seen in the raw matrix
  double max_asymmetry = 0.0;             // ‖H̃ − H̃ᵀ‖_max after weighting
};

// Eigendecomposition of a weighted-symmetric real operator: w_i H_ij = w_j H_ji.
// Similarity transform by D = diag(√w) makes it plainly symmetric.
inline EigenSystem weighted_symmetric_eigs(const Eigen::MatrixXcd& h,
                                           const std::vector<double>& w, int k_lowest = -1) {
  const std::size_t n = h.rows();
  if (w.size() != n) throw ShapeError("weight size mismatch");
  Eigen::MatrixXd hs(n, n);
  EigenSystem out;
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(w[i] > 0.0)) throw ArgumentError("weights must be positive");
    sq[i] = std::sqrt(w[i]);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const cplx v = h(i, j);
      out.max_imaginary = std::max(out.max_imaginary, std::abs(v.imag()));
      hs(i, j) = v.real() * sq[i] / sq[j];
    }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      out.max_asymmetry = std::max(out.max_asymmetry, std::abs(hs(i, j) - hs(j, i)));
      const double s = 0.5 * (hs(i, j) + hs(j, i));
      hs(i, j) = hs(j, i) = s;
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(hs);
  if (solver.info() != Eigen::Success) throw ConvergenceError("eigensolver failed");
  const int k = (k_lowest < 0 || k_lowest > static_cast<int>(n)) ? static_cast<int>(n) : k_lowest;
  out.values.resize(k);
  out.vectors.resize(k);
  for (int m = 0; m < k; ++m) {
    out.values[m] = solver.eigenvalues()(m);
    out.vectors[m].resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out.vectors[m][i] = cplx(solver.eigenvectors()(i, m) / sq[i], 0.0);
  }
  return out;
}

// Thomas back-substitution for tridiagonal systems. No pivoting: intended for
// the diagonally dominant matrices of implicit time steps (I + i*tau*K).
// lower[i] multiplies x[i], upper[i] multiplies x[i+1] in row i+1 resp. i.
inline cvec tridiag_solve(const cvec& lower, const cvec& diag, const cvec& upper,
                          const cvec& rhs) {
  const std::size_t n = diag.size();
  if (n == 0) throw ShapeError("empty tridiagonal system");
  if (lower.size() != n - 1 || upper.size() != n - 1 || rhs.size() != n)
    throw ShapeError("tridiagonal band size mismatch");
  cvec c(n - 1), x(n);
  cplx piv = diag[0];
  if (piv == cplx(0.0)) throw ConvergenceError("zero pivot in tridiagonal solve");
  x[0] = rhs[0] / piv;
  for (std::size_t i = 1; i < n; ++i) {
    c[i - 1] = upper[i - 1] / piv;
    piv = diag[i] - lower[i - 1] * c[i - 1];
    if (piv == cplx(0.0)) throw ConvergenceError("zero pivot in tridiagonal solve");
    x[i] = (rhs[i] - lower[i - 1] * x[i - 1]) / piv;
  }
  for (std::size_t i = n - 1; i-- > 0;) x[i] -= c[i] * x[i + 1];
  return x;
}

}  // namespace pilotwave
