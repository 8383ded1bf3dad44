#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "pilotwave/grid.hpp"

namespace pilotwave {

// Thomas algorithm; bands may be complex (used by implicit steppers too).
inline cvec solve_tridiagonal(const cvec& sub, const cvec& diag, const cvec& sup, cvec rhs) {
  const std::size_t n = diag.size();
  if (n == 0) throw ArgumentError("empty tridiagonal system");
  cvec c(n), d(n);
  cplx piv = diag[0];
  if (piv == cplx(0.0)) throw ConvergenceError("tridiagonal pivot breakdown");
  c[0] = sup[0] / piv;
  d[0] = rhs[0] / piv;
  for (std::size_t i = 1; i < n; ++i) {
    piv = diag[i] - sub[i] * c[i - 1];
    if (piv == cplx(0.0)) throw ConvergenceError("tridiagonal pivot breakdown");
    c[i] = (i + 1 < n ? sup[i] : cplx(0.0)) / piv;
    d[i] = (rhs[i] - sub[i] * d[i - 1]) / piv;
  }
  for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
  return d;
}

// Cyclic variant (corner entries = sub[0] top-right, sup[n-1] bottom-left)
// via Sherman–Morrison.
inline cvec solve_cyclic_tridiagonal(const cvec& sub, const cvec& diag, const cvec& sup,
                                     const cvec& rhs) {
  const std::size_t n = diag.size();
  if (n < 3) throw ArgumentError("cyclic system needs n >= 3");
  const cplx alpha = sub[0];      // A[0][n-1]
  const cplx beta = sup[n - 1];   // A[n-1][0]
  const cplx gamma = -diag[0];
  cvec d2 = diag;
  d2[0] = diag[0] - gamma;
  d2[n - 1] = diag[n - 1] - alpha * beta / gamma;
  cvec u(n, cplx(0.0));
  u[0] = gamma;
  u[n - 1] = beta;
  cvec y = solve_tridiagonal(sub, d2, sup, rhs);
  cvec z = solve_tridiagonal(sub, d2, sup, u);
  const cplx vy = y[0] + alpha / gamma * y[n - 1];
  const cplx vz = z[0] + alpha / gamma * z[n - 1];
  const cplx factor = vy / (cplx(1.0) + vz);
  for (std::size_t i = 0; i < n; ++i) y[i] -= factor * z[i];
  return y;
}

namespace detail {

// Second derivatives M_i of the interpolating cubic spline on a uniform grid.
// Periodic closure or not-a-knot ends; both reproduce cubics exactly.
inline cvec spline_second_derivatives(const cvec& f, double h, bool periodic) {
  const std::size_t n = f.size();
  const double ih2 = 6.0 / (h * h);
  if (periodic) {
    cvec sub(n, cplx(1.0)), diag(n, cplx(4.0)), sup(n, cplx(1.0)), rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
      const cplx fm = f[(i + n - 1) % n], fp = f[(i + 1) % n];
      rhs[i] = ih2 * (fm - 2.0 * f[i] + fp);
    }
    return solve_cyclic_tridiagonal(sub, diag, sup, rhs);
  }
  if (n < 4) throw ArgumentError("not-a-knot spline needs >= 4 points");
  cvec m(n);
  // interior equations i=1..n-2; not-a-knot closures M0=2M1-M2, M_{n-1}=2M_{n-2}-M_{n-3}
  // fold the closures into rows 1 and n-2, which become 6*M = rhs
  auto r = [&](std::size_t i) { return ih2 * (f[i - 1] - 2.0 * f[i] + f[i + 1]); };
  m[1] = r(1) / 6.0;
  m[n - 2] = r(n - 2) / 6.0;
  if (n > 4) {
    const std::size_t k = n - 4;  // unknowns M_2..M_{n-3}
    cvec sub(k, cplx(1.0)), diag(k, cplx(4.0)), sup(k, cplx(1.0)), rhs(k);
    for (std::size_t j = 0; j < k; ++j) rhs[j] = r(j + 2);
    rhs[0] -= m[1];
    rhs[k - 1] -= m[n - 2];
    cvec mid = solve_tridiagonal(sub, diag, sup, rhs);
    for (std::size_t j = 0; j < k; ++j) m[j + 2] = mid[j];
  }
  m[0] = 2.0 * m[1] - m[2];
  m[n - 1] = 2.0 * m[n - 2] - m[n - 3];
  return m;
}

// cell coefficients in local coordinate u ∈ [0,1]:
// S = c0 + u(c1 + u(c2 + u c3)), S' = (c1 + u(2c2 + 3u c3))/h
inline std::array<cplx, 4> cell_coeffs(const cplx& fi, const cplx& fj, const cplx& Mi,
                                       const cplx& Mj, double h) {
  const double h26 = h * h / 6.0;
  return {fi, (fj - fi) - h26 * (2.0 * Mi + Mj), 3.0 * h26 * Mi, h26 * (Mj - Mi)};
}

}  // namespace detail

// Piecewise-cubic interpolant of complex samples on a uniform 1D grid with an
// analytic first derivative; exact on cubic polynomials.
class Spline1D {
 public:
  Spline1D() = default;

  Spline1D(const cvec& f, double x0, double h, bool periodic)
      : x0_(x0), h_(h), inv_h_(1.0 / h), periodic_(periodic) {
    const std::size_t n = f.size();
    if (n < 4) throw ArgumentError("spline needs >= 4 samples");
    cvec m = detail::spline_second_derivatives(f, h, periodic);
    n_cells_ = periodic ? n : n - 1;
    period_ = n * h;
    cells_.resize(n_cells_);
    for (std::size_t i = 0; i < n_cells_; ++i) {
      const std::size_t j = (i + 1) % n;  // wraps only in the periodic case
      cells_[i] = detail::cell_coeffs(f[i], f[j], m[i], m[j], h);
    }
  }

  void eval(double x, cplx* value, cplx* deriv) const {
    double u;
    const std::array<cplx, 4>& c = locate(x, u);
    if (value) *value = c[0] + u * (c[1] + u * (c[2] + u * c[3]));
    if (deriv) *deriv = (c[1] + u * (2.0 * c[2] + 3.0 * u * c[3])) * inv_h_;
  }

  cplx value(double x) const {
    cplx v;
    eval(x, &v, nullptr);
    return v;
  }

  bool periodic() const { return periodic_; }
  double x0() const { return x0_; }
  double x_end() const { return x0_ + n_cells_ * h_; }

 private:
  friend class Spline2D;

  const std::array<cplx, 4>& locate(double x, double& u) const {
    double t = (x - x0_) * inv_h_;
    if (periodic_) {
      t -= std::floor(t / n_cells_) * n_cells_;
      std::size_t i = static_cast<std::size_t>(t);
      if (i >= n_cells_) i = n_cells_ - 1;
      u = t - static_cast<double>(i);
      return cells_[i];
    }
    // valid region: one-cell margin inside the sampled range
    if (!(t >= 1.0 && t <= static_cast<double>(n_cells_) - 1.0))
      throw OutOfDomainError("interpolation point outside valid region");
    std::size_t i = static_cast<std::size_t>(t);
    if (i >= n_cells_) i = n_cells_ - 1;
    u = t - static_cast<double>(i);
    return cells_[i];
  }

  std::vector<std::array<cplx, 4>> cells_;
  double x0_ = 0.0, h_ = 1.0, inv_h_ = 1.0, period_ = 0.0;
  std::size_t n_cells_ = 0;
  bool periodic_ = true;
};

// Tensor-product bicubic interpolant (spline-of-splines); value plus both
// partial derivatives per query. Data row-major: f[i*n + j], axis 0 = i.
class Spline2D {
 public:
  Spline2D() = default;

  Spline2D(const cvec& f, int n, std::array<double, 2> x0, double h, bool periodic)
      : x0_(x0), h_(h), inv_h_(1.0 / h), periodic_(periodic) {
    const std::size_t un = static_cast<std::size_t>(n);
    if (f.size() != un * un) throw ShapeError("spline data size mismatch");
    nc_ = periodic ? un : un - 1;
    n_ = un;
    // pass 1: spline each row along axis 1 -> per (row, cell_j) coeffs D[b]
    std::vector<cvec> d(4, cvec(un * nc_));
    cvec row(un);
    for (std::size_t i = 0; i < un; ++i) {
      for (std::size_t j = 0; j < un; ++j) row[j] = f[i * un + j];
      cvec m = detail::spline_second_derivatives(row, h, periodic);
      for (std::size_t j = 0; j < nc_; ++j) {
        const std::size_t jn = (j + 1) % un;
        auto c = detail::cell_coeffs(row[j], row[jn], m[j], m[jn], h);
        for (int b = 0; b < 4; ++b) d[b][i * nc_ + j] = c[b];
      }
    }
    // pass 2: spline each coefficient column along axis 0
    cells_.resize(nc_ * nc_);
    cvec col(un);
    for (std::size_t j = 0; j < nc_; ++j) {
      for (int b = 0; b < 4; ++b) {
        for (std::size_t i = 0; i < un; ++i) col[i] = d[b][i * nc_ + j];
        cvec m = detail::spline_second_derivatives(col, h, periodic);
        for (std::size_t i = 0; i < nc_; ++i) {
          const std::size_t in = (i + 1) % un;
          auto c = detail::cell_coeffs(col[i], col[in], m[i], m[in], h);
          for (int a = 0; a < 4; ++a) cells_[i * nc_ + j][a * 4 + b] = c[a];
        }
      }
    }
  }

  void eval(double x, double y, cplx* value, cplx* gx, cplx* gy) const {
    double u, w;
    const std::size_t i = locate(x, 0, u), j = locate(y, 1, w);
    const std::array<cplx, 16>& c = cells_[i * nc_ + j];
    cplx p[4], dp[4];
    for (int a = 0; a < 4; ++a) {
      const cplx* r = &c[a * 4];
      p[a] = r[0] + w * (r[1] + w * (r[2] + w * r[3]));
      dp[a] = r[1] + w * (2.0 * r[2] + 3.0 * w * r[3]);
    }
    if (value) *value = p[0] + u * (p[1] + u * (p[2] + u * p[3]));
    if (gx) *gx = (p[1] + u * (2.0 * p[2] + 3.0 * u * p[3])) * inv_h_;
    if (gy) *gy = (dp[0] + u * (dp[1] + u * (dp[2] + u * dp[3]))) * inv_h_;
  }

 private:
  std::size_t locate(double x, int axis, double& u) const {
    double t = (x - x0_[axis]) * inv_h_;
    if (periodic_) {
      t -= std::floor(t / n_) * n_;
      std::size_t i = static_cast<std::size_t>(t);
      if (i >= nc_) i = nc_ - 1;
      u = t - static_cast<double>(i);
      return i;
    }
    if (!(t >= 1.0 && t <= static_cast<double>(nc_) - 1.0))
      throw OutOfDomainError("interpolation point outside valid region");
    std::size_t i = static_cast<std::size_t>(t);
    if (i >= nc_) i = nc_ - 1;
    u = t - static_cast<double>(i);
    return i;
  }

  std::vector<std::array<cplx, 16>> cells_;
  std::array<double, 2> x0_{};
  double h_ = 1.0, inv_h_ = 1.0;
  std::size_t n_ = 0, nc_ = 0;
  bool periodic_ = true;
};

// Spec-level convenience: spline a grid wavefunction and query a single point.
// Hot paths construct the spline once and reuse it.
struct ValueGradient {
  cplx value;
  cvec gradient;
};

inline ValueGradient interpolate_value_and_gradient(const GridWavefunction& psi,
                                                    const std::vector<double>& q) {
  psi.check_shape();
  if (static_cast<int>(q.size()) != psi.spec.dim)
    throw ArgumentError("query dimension mismatch");
  const bool per = psi.spec.boundary == Boundary::periodic;
  if (psi.spec.dim == 1) {
    Spline1D s(psi.amp, psi.spec.origin_offset[0], psi.spec.spacing, per);
    ValueGradient out{cplx(0.0), cvec(1)};
    s.eval(q[0], &out.value, &out.gradient[0]);
    return out;
  }
  if (psi.spec.dim == 2) {
    Spline2D s(psi.amp, psi.spec.points_per_axis,
               {psi.spec.origin_offset[0], psi.spec.origin_offset[1]}, psi.spec.spacing, per);
    ValueGradient out{cplx(0.0), cvec(2)};
    s.eval(q[0], q[1], &out.value, &out.gradient[0], &out.gradient[1]);
    return out;
  }
  throw ArgumentError("interpolation implemented for dim <= 2 grids");
}

}  // namespace pilotwave
