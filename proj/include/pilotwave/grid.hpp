#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "pilotwave/errors.hpp"

namespace pilotwave {

inline constexpr double kPi = 3.14159265358979323846;

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;

enum class Boundary { periodic, box };  // box carries an absorbing margin in scattering runs

// Uniform rectangular grid, same point count along every axis.
// Row-major flattening: last axis fastest.
struct GridSpec {
  int dim = 1;
  int points_per_axis = 8;
  double spacing = 1.0;
  std::vector<double> origin_offset;  // coordinate of grid point 0 per axis
  Boundary boundary = Boundary::periodic;

  static GridSpec make(int dim, int points, double spacing, std::vector<double> offset,
                       Boundary boundary) {
    if (dim < 1) throw ArgumentError("grid dim must be >= 1");
    if (points < 8) throw ArgumentError("need at least 8 points per axis");
    if (!(spacing > 0.0)) throw ArgumentError("grid spacing must be positive");
    if (offset.empty()) offset.assign(dim, 0.0);
    if (static_cast<int>(offset.size()) != dim)
      throw ArgumentError("origin_offset size must match dim");
    double total = std::pow(static_cast<double>(points), dim);
    if (total > static_cast<double>(1 << 28)) throw ArgumentError("grid exceeds 2^28 points");
    return GridSpec{dim, points, spacing, std::move(offset), boundary};
  }

  std::size_t total_points() const {
    std::size_t t = 1;
    for (int a = 0; a < dim; ++a) t *= static_cast<std::size_t>(points_per_axis);
    return t;
  }
  double cell_volume() const { return std::pow(spacing, dim); }
  double extent() const { return points_per_axis * spacing; }  // per axis
  double coord(int axis, int index) const { return origin_offset[axis] + index * spacing; }

  bool same_geometry(const GridSpec& o) const {
    if (dim != o.dim || points_per_axis != o.points_per_axis) return false;
    if (spacing != o.spacing || boundary != o.boundary) return false;
    for (int a = 0; a < dim; ++a)
      if (origin_offset[a] != o.origin_offset[a]) return false;
    return true;
  }
};

struct GridWavefunction {
  GridSpec spec;
  cvec amp;
  double time = 0.0;

  double squared_norm() const {
    double s = 0.0;
    for (const cplx& a : amp) s += std::norm(a);
    return s * spec.cell_volume();
  }
  double norm() const { return std::sqrt(squared_norm()); }

  void check_shape() const {
    if (amp.size() != spec.total_points())
      throw ShapeError("amplitude count does not match grid");
  }
  void check_finite() const {
    for (const cplx& a : amp)
      if (!std::isfinite(a.real()) || !std::isfinite(a.imag()))
        throw BlowupError("non-finite amplitude");
  }
};

inline GridWavefunction make_wavefunction(const GridSpec& spec, cvec amp, double time = 0.0) {
  GridWavefunction psi{spec, std::move(amp), time};
  psi.check_shape();
  return psi;
}

// Fill a wavefunction by evaluating fn at every grid point (dim <= 3 loops below).
template <typename Fn>
GridWavefunction fill_wavefunction(const GridSpec& spec, Fn&& fn, double time = 0.0) {
  GridWavefunction psi{spec, cvec(spec.total_points()), time};
  const int n = spec.points_per_axis;
  if (spec.dim == 1) {
    for (int i = 0; i < n; ++i) psi.amp[i] = fn(std::vector<double>{spec.coord(0, i)});
  } else if (spec.dim == 2) {
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j, ++idx)
        psi.amp[idx] = fn(std::vector<double>{spec.coord(0, i), spec.coord(1, j)});
  } else {
    std::vector<int> mi(spec.dim, 0);
    for (std::size_t idx = 0; idx < psi.amp.size(); ++idx) {
      std::vector<double> x(spec.dim);
      for (int a = 0; a < spec.dim; ++a) x[a] = spec.coord(a, mi[a]);
      psi.amp[idx] = fn(x);
      for (int a = spec.dim - 1; a >= 0; --a) {
        if (++mi[a] < n) break;
        mi[a] = 0;
      }
    }
  }
  return psi;
}

inline void normalize(GridWavefunction& psi) {
  double n = psi.norm();
  if (!(n > 0.0)) throw ArgumentError("cannot normalize zero wavefunction");
  for (cplx& a : psi.amp) a /= n;
}

}  // namespace pilotwave
