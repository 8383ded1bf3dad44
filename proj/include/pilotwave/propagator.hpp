#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "pilotwave/constants.hpp"
#include "pilotwave/fft.hpp"
#include "pilotwave/grid.hpp"
#include "pilotwave/linops.hpp"

namespace pilotwave {

struct CnOptions {
  double tol = 1e-10;  // relative residual on the implicit equation
  int max_iter = 800;
};

// One Crank–Nicolson step (1 + i dt H/2ħ)ψ' = (1 − i dt H/2ħ)ψ for an
// arbitrary symmetric apply, solved by CG on the normal equations
// (I + α²H²)ψ' = (1 − iαH)²ψ, which is Hermitian positive definite.
inline cvec crank_nicolson_step(const ApplyFn& h_apply, const cvec& psi, double dt, double hbar,
                                const CnOptions& opts = {},
                                const std::vector<double>* w = nullptr) {
  const double alpha = 0.5 * dt / hbar;
  const std::size_t n = psi.size();
  auto a_minus = [&](const cvec& v) {  // (1 - iαH) v
    cvec hv = h_apply(v);
    if (hv.size() != n) throw ShapeError("hamiltonian apply changed size");
    for (std::size_t i = 0; i < n; ++i) hv[i] = v[i] - cplx(0.0, alpha) * hv[i];
    return hv;
  };
  cvec b = a_minus(a_minus(psi));
  auto normal_op = [&](const cvec& v) {  // (I + α²H²) v
    cvec hv = h_apply(v);
    cvec hhv = h_apply(hv);
    for (std::size_t i = 0; i < n; ++i) hhv[i] = v[i] + alpha * alpha * hhv[i];
    return hhv;
  };
  cvec x = cg_solve(normal_op, b, 0.1 * opts.tol, opts.max_iter, w);
  // verify the residual of the original implicit equation
  cvec hx = h_apply(x);
  cvec rhs = a_minus(psi);
  double r2 = 0.0, b2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wi = w ? (*w)[i] : 1.0;
    const cplx resid = (x[i] + cplx(0.0, alpha) * hx[i]) - rhs[i];
    r2 += wi * std::norm(resid);
    b2 += wi * std::norm(rhs[i]);
  }
  if (!(std::sqrt(r2) <= opts.tol * std::sqrt(b2) + 1e-300))
    throw ConvergenceError("Crank-Nicolson residual above tolerance");
  return x;
}

inline GridWavefunction evolve_crank_nicolson(const GridWavefunction& psi,
                                              const ApplyFn& h_apply, double dt, double hbar,
                                              const CnOptions& opts = {}) {
  psi.check_shape();
  GridWavefunction out = psi;
  out.amp = crank_nicolson_step(h_apply, psi.amp, dt, hbar, opts);
  out.time += dt;
  out.check_finite();
  return out;
}

// Smooth imaginary-potential ramp occupying the outer `fraction` of each axis
// of a box grid; applied as decay exp(-W dt/ħ). Reported in run metadata.
inline std::vector<double> make_absorbing_margin(const GridSpec& spec, double fraction,
                                                 double strength) {
  if (!(fraction > 0.0 && fraction < 0.5)) throw ArgumentError("margin fraction in (0, 0.5)");
  const int n = spec.points_per_axis;
  const int m = std::max(1, static_cast<int>(fraction * n));
  auto ramp = [&](int i) {
    int d = std::min(i, n - 1 - i);
    if (d >= m) return 0.0;
    const double xi = 1.0 - static_cast<double>(d) / m;  // 0 at inner edge, 1 at boundary
    return strength * xi * xi * xi * (10.0 + xi * (-15.0 + 6.0 * xi));
  };
  std::vector<double> w(spec.total_points(), 0.0);
  if (spec.dim == 1) {
    for (int i = 0; i < n; ++i) w[i] = ramp(i);
  } else if (spec.dim == 2) {
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j, ++idx) w[idx] = ramp(i) + ramp(j);
  } else {
    throw ArgumentError("absorbing margin implemented for dim <= 2");
  }
  return w;
}

// Strang split-step spectral propagator on periodic grids; box grids take the
// implicit (Crank–Nicolson, finite-difference Laplacian) path. The optional
// absorber is a nonnegative imaginary-potential profile (norm then decays by
// design and the norm guard is skipped).
inline GridWavefunction evolve_schrodinger(const GridWavefunction& psi,
                                           const std::vector<double>& potential, double dt,
                                           const Constants& constants,
                                           const std::vector<double>* absorber = nullptr) {
  psi.check_shape();
  if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
  if (potential.size() != psi.amp.size()) throw ShapeError("potential grid mismatch");
  for (double v : potential)
    if (!std::isfinite(v)) throw ArgumentError("potential must be bounded");
  const GridSpec& g = psi.spec;
  const int n = g.points_per_axis;
  GridWavefunction out = psi;

  if (g.boundary == Boundary::periodic) {
    // half potential phase (plus optional absorber decay)
    const double hp = 0.5 * dt / constants.hbar;
    for (std::size_t i = 0; i < out.amp.size(); ++i) {
      cplx f = std::polar(1.0, -hp * potential[i]);
      if (absorber) f *= std::exp(-hp * (*absorber)[i]);
      out.amp[i] *= f;
    }
    // kinetic phase, separable over axes
    fft_forward(out.amp, g.dim, n);
    std::vector<cvec> axis_phase(g.dim, cvec(n));
    for (int a = 0; a < g.dim; ++a) {
      const double c = 0.5 * constants.hbar * dt / constants.mass(a);
      for (int i = 0; i < n; ++i) {
        const double k = fft_wavenumber(i, n, g.spacing);
        axis_phase[a][i] = std::polar(1.0, -c * k * k);
      }
    }
    if (g.dim == 1) {
      for (int i = 0; i < n; ++i) out.amp[i] *= axis_phase[0][i];
    } else if (g.dim == 2) {
      std::size_t idx = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j, ++idx) out.amp[idx] *= axis_phase[0][i] * axis_phase[1][j];
    } else {
      std::vector<int> mi(g.dim, 0);
      for (std::size_t idx = 0; idx < out.amp.size(); ++idx) {
        cplx f(1.0);
        for (int a = 0; a < g.dim; ++a) f *= axis_phase[a][mi[a]];
        out.amp[idx] *= f;
        for (int a = g.dim - 1; a >= 0; --a) {
          if (++mi[a] < n) break;
          mi[a] = 0;
        }
      }
    }
    fft_inverse(out.amp, g.dim, n);
    for (std::size_t i = 0; i < out.amp.size(); ++i) {
      cplx f = std::polar(1.0, -hp * potential[i]);
      if (absorber) f *= std::exp(-hp * (*absorber)[i]);
      out.amp[i] *= f;
    }
  } else {
    // implicit path: second-order finite-difference Laplacian, Dirichlet walls
    if (g.dim != 1) throw ArgumentError("implicit box path implemented for 1D");
    const double kin = -0.5 * constants.hbar * constants.hbar /
                       (constants.mass(0) * g.spacing * g.spacing);
    auto h_apply = [&](const cvec& v) {
      cvec hv(v.size());
      for (int i = 0; i < n; ++i) {
        const cplx left = i > 0 ? v[i - 1] : cplx(0.0);
        const cplx right = i + 1 < n ? v[i + 1] : cplx(0.0);
        hv[i] = kin * (left - 2.0 * v[i] + right) + potential[i] * v[i];
      }
      return hv;
    };
    out.amp = crank_nicolson_step(h_apply, out.amp, dt, constants.hbar);
  }

  out.time += dt;
  out.check_finite();
  if (!absorber) {
    const double drift = std::abs(out.squared_norm() / psi.squared_norm() - 1.0);
    if (drift > 1e-8) throw BlowupError("propagator norm drift above guard");
  }
  return out;
}

}  // namespace pilotwave
