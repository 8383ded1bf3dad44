#pragma once
// Free Dirac equation in 1+1 dimensions on a periodic grid, with the
// probability current and its integral curves (worldlines).
//
// Representation: gamma^0 = diag(1,-1), gamma^1 = [[0,1],[-1,0]], so
// alpha = gamma^0 gamma^1 = [[0,1],[1,0]].  Spinors are stored as two
// component arrays psi = (upper, lower).  The Hamiltonian in momentum
// space is h(k) = [[m, hbar k], [hbar k, -m]] (units where c = 1), and a
// time step applies the exact rotation
//   exp(-i h(k) dt / hbar) = cos(theta) I - i sin(theta)/E * h(k),
// theta = E dt / hbar, E = sqrt((hbar k)^2 + m^2), so the evolution is
// unitary to rounding and exact for band-limited data.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "pilotwave/bohm.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/fft.hpp"
#include "pilotwave/grid.hpp"
#include "pilotwave/rng.hpp"
#include "pilotwave/equivariance.hpp"
#include "pilotwave/spline.hpp"
#include "pilotwave/threadpool.hpp"

namespace pilotwave {

struct DiracCurrent {
  double j0 = 0.0;  // psi^dag psi
  double j1 = 0.0;  // psi^dag alpha psi
};

// j^0 -+ j^1 = |a -+ b|^2 >= 0 for any pair of complex numbers.  Computing
// through the two squares keeps the inequality exact in floating point:
// both j0 +- j1 are differences of floats ordered before rounding.
inline DiracCurrent spinor_current(cplx a, cplx b) {
  const double p = std::norm(a + b);
  const double m = std::norm(a - b);
  return {0.5 * (p + m), 0.5 * (p - m)};
}

struct DiracField {
  GridSpec spec;  // one axis, periodic
  cvec upper;
  cvec lower;
  double time = 0.0;
  double mass = 1.0;
  double hbar = 1.0;

  void check_shape() const {
    if (spec.dim != 1) throw ShapeError("spinor field needs a one-axis grid");
    if (spec.boundary != Boundary::periodic)
      throw ArgumentError("spectral spinor step needs periodic boundaries");
    const auto n = static_cast<std::size_t>(spec.points_per_axis);
    if (upper.size() != n || lower.size() != n)
      throw ShapeError("spinor component length does not match the grid");
    if (!(mass >= 0.0)) throw ArgumentError("mass must be nonnegative");
    if (!(hbar > 0.0)) throw ArgumentError("hbar must be positive");
  }

  DiracCurrent current_at(long i) const { return spinor_current(upper[i], lower[i]); }

  // total probability: sum j^0 h
  double norm1() const {
    double total = 0.0;
    for (std::size_t i = 0; i < upper.size(); ++i)
      total += std::norm(upper[i]) + std::norm(lower[i]);
    return total * spec.spacing;
  }

  void normalize() {
    const double n1 = norm1();
    if (!(n1 > 0.0)) throw DegenerateDensityError("cannot normalize a null spinor field");
    const double s = 1.0 / std::sqrt(n1);
    for (auto& v : upper) v *= s;
    for (auto& v : lower) v *= s;
  }
};

inline DiracCurrent dirac_current(const DiracField& f, long index) {
  f.check_shape();
  if (index < 0 || index >= f.spec.points_per_axis)
    throw ArgumentError("current index outside the grid");
  return f.current_at(index);
}

// Exact spectral step.  |dt| may not exceed the grid spacing: one step may
// not transport probability past a cell, which keeps stored timelines honest
// about their resolution.
inline void evolve_dirac(DiracField& f, double dt) {
  f.check_shape();
  if (dt == 0.0) return;
  if (std::abs(dt) > f.spec.spacing + 1e-15 * f.spec.spacing)
    throw StepSizeError("spinor step larger than the grid spacing");
  const int n = static_cast<int>(f.spec.points_per_axis);
  fft_forward(f.upper, 1, n);
  fft_forward(f.lower, 1, n);
  const double m = f.mass;
  for (int i = 0; i < n; ++i) {
    const double p = f.hbar * fft_wavenumber(i, n, f.spec.spacing);
    const double e = std::hypot(p, m);
    const double theta = e * dt / f.hbar;
    const double c = std::cos(theta);
    // sin(theta)/E -> dt/hbar as E -> 0 (massless zero mode)
    const double s = e > 0.0 ? std::sin(theta) / e : dt / f.hbar;
    const cplx u = f.upper[i];
    const cplx v = f.lower[i];
    const cplx is(0.0, s);
    f.upper[i] = c * u - is * (m * u + p * v);
    f.lower[i] = c * v - is * (p * u - m * v);
  }
  fft_inverse(f.upper, 1, n);
  fft_inverse(f.lower, 1, n);
  f.time += dt;
}

// j^0-weighted mean position in the unfolded chart of the grid window.
inline double mean_position(const DiracField& f) {
  f.check_shape();
  double w = 0.0, acc = 0.0;
  for (long i = 0; i < f.spec.points_per_axis; ++i) {
    const double d = f.current_at(i).j0;
    w += d;
    acc += d * f.spec.coord(0, i);
  }
  if (!(w > 0.0)) throw DegenerateDensityError("mean position of a null field");
  return acc / w;
}

// |psi|^2 of the spinor packaged as a scalar grid function so the density
// samplers and histogram reports apply unchanged.
inline GridWavefunction dirac_density_wavefunction(const DiracField& f) {
  f.check_shape();
  GridWavefunction out;
  out.spec = f.spec;
  out.time = f.time;
  out.amp.resize(f.upper.size());
  for (std::size_t i = 0; i < f.upper.size(); ++i)
    out.amp[i] = std::sqrt(std::norm(f.upper[i]) + std::norm(f.lower[i]));
  return out;
}

// --- initial data -----------------------------------------------------------

// Positive-energy plane wave for the mode_index-th lattice mode:
// u_+(k) = ((E+m), hbar k) / sqrt(2 E (E+m)), times e^{ikx}/sqrt(L).
inline DiracField plane_wave_field(const GridSpec& spec, int mode_index, double mass,
                                   double hbar = 1.0) {
  DiracField f;
  f.spec = spec;
  f.mass = mass;
  f.hbar = hbar;
  const int n = static_cast<int>(spec.points_per_axis);
  f.upper.assign(n, 0.0);
  f.lower.assign(n, 0.0);
  f.check_shape();
  const int im = ((mode_index % n) + n) % n;
  const double k = fft_wavenumber(im, n, spec.spacing);
  const double p = hbar * k;
  const double e = std::hypot(p, mass);
  double a = e + mass, b = p;
  const double nrm = std::sqrt(2.0 * e * (e + mass));
  if (nrm > 0.0) {
    a /= nrm;
    b /= nrm;
  } else {  // massless zero mode: conventional rest spinor
    a = 1.0;
    b = 0.0;
  }
  const double amp = 1.0 / std::sqrt(spec.extent());
  for (int i = 0; i < n; ++i) {
    const cplx phase = std::exp(cplx(0.0, k * spec.coord(0, i))) * amp;
    f.upper[i] = a * phase;
    f.lower[i] = b * phase;
  }
  return f;
}

// Gaussian envelope exp(-(x-x0)^2/(4 sigma^2) + i k0 x) times a constant
// spinor (ca, cb), normalized.  sigma is the position-space standard
// deviation of |psi|^2.
inline DiracField gaussian_spinor_field(const GridSpec& spec, double x0, double sigma,
                                        double k0, cplx ca, cplx cb, double mass,
                                        double hbar = 1.0) {
  if (!(sigma > 0.0)) throw ArgumentError("packet width must be positive");
  DiracField f;
  f.spec = spec;
  f.mass = mass;
  f.hbar = hbar;
  const int n = static_cast<int>(spec.points_per_axis);
  f.upper.resize(n);
  f.lower.resize(n);
  f.check_shape();
  for (int i = 0; i < n; ++i) {
    const double x = spec.coord(0, i);
    const cplx env = std::exp(cplx(-(x - x0) * (x - x0) / (4.0 * sigma * sigma), k0 * x));
    f.upper[i] = ca * env;
    f.lower[i] = cb * env;
  }
  f.normalize();
  return f;
}

// --- stored timelines and worldlines ----------------------------------------

// One snapshot wrapped for off-grid evaluation: periodic cubic splines of the
// two components plus the mean density used by the node guard.
struct DiracFrame {
  std::shared_ptr<const Spline1D> up;
  std::shared_ptr<const Spline1D> lo;
  double time = 0.0;
  double mean_j0 = 0.0;

  DiracCurrent current(double x) const {
    cplx a, b;
    up->eval(x, &a, nullptr);
    lo->eval(x, &b, nullptr);
    return spinor_current(a, b);
  }
};

inline DiracFrame make_dirac_frame(const DiracField& f) {
  f.check_shape();
  DiracFrame fr;
  const double x0 = f.spec.origin_offset.empty() ? 0.0 : f.spec.origin_offset[0];
  fr.up = std::make_shared<Spline1D>(f.upper, x0, f.spec.spacing, true);
  fr.lo = std::make_shared<Spline1D>(f.lower, x0, f.spec.spacing, true);
  fr.time = f.time;
  double acc = 0.0;
  for (long i = 0; i < f.spec.points_per_axis; ++i) acc += f.current_at(i).j0;
  fr.mean_j0 = acc / static_cast<double>(f.spec.points_per_axis);
  return fr;
}

class StoredDiracTimeline {
 public:
  StoredDiracTimeline(std::vector<DiracField> snaps, double t0, double frame_dt)
      : t0_(t0), frame_dt_(frame_dt) {
    if (snaps.size() < 2) throw ArgumentError("timeline needs at least two snapshots");
    if (!(frame_dt > 0.0)) throw ArgumentError("frame spacing must be positive");
    for (const auto& s : snaps) {
      s.check_shape();
      if (!s.spec.same_geometry(snaps.front().spec))
        throw ShapeError("timeline snapshots must share one grid");
      if (s.mass != snaps.front().mass || s.hbar != snaps.front().hbar)
        throw ArgumentError("timeline snapshots must share mass and hbar");
    }
    frames_.reserve(snaps.size());
    for (std::size_t k = 0; k < snaps.size(); ++k) {
      DiracFrame fr = make_dirac_frame(snaps[k]);
      fr.time = t0 + static_cast<double>(k) * frame_dt;
      frames_.push_back(std::move(fr));
    }
    spec_ = snaps.front().spec;
  }

  double t0() const { return t0_; }
  double frame_dt() const { return frame_dt_; }
  long frame_count() const { return static_cast<long>(frames_.size()); }
  double horizon() const { return t0_ + frame_dt_ * static_cast<double>(frames_.size() - 1); }
  const DiracFrame& frame(long k) const { return frames_.at(static_cast<std::size_t>(k)); }
  const GridSpec& spec() const { return spec_; }

 private:
  std::vector<DiracFrame> frames_;
  GridSpec spec_;
  double t0_ = 0.0;
  double frame_dt_ = 0.0;
};

// Evolve psi0 with the exact step and store frames_count snapshots spaced
// frame_dt = steps_per_frame * dt apart (dt each individual step).
inline StoredDiracTimeline propagate_dirac_timeline(const DiracField& psi0, double dt,
                                                    long steps_per_frame, long frame_count) {
  if (steps_per_frame < 1) throw ArgumentError("steps per frame must be >= 1");
  if (frame_count < 2) throw ArgumentError("timeline needs at least two frames");
  std::vector<DiracField> snaps;
  snaps.reserve(static_cast<std::size_t>(frame_count));
  DiracField cur = psi0;
  cur.check_shape();
  snaps.push_back(cur);
  for (long f = 1; f < frame_count; ++f) {
    for (long s = 0; s < steps_per_frame; ++s) evolve_dirac(cur, dt);
    snaps.push_back(cur);
  }
  return StoredDiracTimeline(std::move(snaps), psi0.time, dt * static_cast<double>(steps_per_frame));
}

struct WorldlineEvent {
  double t = 0.0;
  double x = 0.0;
  double velocity = 0.0;  // dx/dt = j^1/j^0 at (t, x)
};

struct Worldline {
  std::vector<WorldlineEvent> events;
  TrajectoryStatus status = TrajectoryStatus::completed;

  double max_speed() const {
    double m = 0.0;
    for (const auto& e : events) m = std::max(m, std::abs(e.velocity));
    return m;
  }
};

namespace detail {

// Velocity from spinor components interpolated between two frames.  The
// current of *any* complex spinor obeys j^0 >= |j^1|, so interpolating the
// spinor (rather than the currents) keeps |dx/dt| <= 1 everywhere by
// construction.
struct DiracVelocity {
  const DiracFrame* a = nullptr;
  const DiracFrame* b = nullptr;
  double w = 0.0;               // blend weight toward frame b
  double node_floor = 0.0;      // j^0 threshold (absolute)

  bool velocity(double x, double* v) const {
    cplx ua, la, ub, lb;
    a->up->eval(x, &ua, nullptr);
    a->lo->eval(x, &la, nullptr);
    b->up->eval(x, &ub, nullptr);
    b->lo->eval(x, &lb, nullptr);
    const DiracCurrent c = spinor_current((1.0 - w) * ua + w * ub, (1.0 - w) * la + w * lb);
    if (!(c.j0 > node_floor)) return false;
    *v = c.j1 / c.j0;
    return true;
  }
};

}  // namespace detail

// Integrate dx/dt = j^1/j^0 from (t0, x0) across the whole stored timeline
// with classic RK4, recording every substep.  Substep dt must tile the frame
// spacing.  j^0 falling below node_epsilon times the running frame's mean
// density raises the node guard.
inline Worldline integrate_worldline(const StoredDiracTimeline& tl, double x0, double dt,
                                     double node_epsilon = 1e-9) {
  if (!(dt > 0.0)) throw ArgumentError("worldline step must be positive");
  const long nsub = detail::substeps_for(tl.frame_dt(), dt);
  Worldline wl;
  double x = x0;
  {
    const DiracCurrent c = tl.frame(0).current(x);
    if (!(c.j0 > node_epsilon * tl.frame(0).mean_j0))
      throw NodeProximityError("worldline starts in a node region");
    wl.events.push_back({tl.t0(), x, c.j1 / c.j0});
  }
  const double h = tl.frame_dt() / static_cast<double>(nsub);
  for (long f = 0; f + 1 < tl.frame_count(); ++f) {
    const DiracFrame& fa = tl.frame(f);
    const DiracFrame& fb = tl.frame(f + 1);
    detail::DiracVelocity vel;
    vel.a = &fa;
    vel.b = &fb;
    vel.node_floor = node_epsilon * std::max(fa.mean_j0, fb.mean_j0);
    for (long s = 0; s < nsub; ++s) {
      const double tloc = static_cast<double>(s) * h;
      double k1, k2, k3, k4;
      vel.w = tloc / tl.frame_dt();
      if (!vel.velocity(x, &k1)) {
        wl.status = TrajectoryStatus::hit_node_region;
        return wl;
      }
      vel.w = (tloc + 0.5 * h) / tl.frame_dt();
      if (!vel.velocity(x + 0.5 * h * k1, &k2) || !vel.velocity(x + 0.5 * h * k2, &k3)) {
        wl.status = TrajectoryStatus::hit_node_region;
        return wl;
      }
      vel.w = (tloc + h) / tl.frame_dt();
      if (!vel.velocity(x + h * k3, &k4)) {
        wl.status = TrajectoryStatus::hit_node_region;
        return wl;
      }
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      double vend;
      if (!vel.velocity(x, &vend)) {
        wl.status = TrajectoryStatus::hit_node_region;
        return wl;
      }
      wl.events.push_back({fa.time + tloc + h, x, vend});
    }
  }
  return wl;
}

struct WorldlineEnsemble {
  std::vector<Worldline> lines;
  std::vector<std::vector<double>> finals;   // 1-vector per completed line
  std::vector<TrajectoryStatus> status;
  double max_speed = 0.0;
};

// Sample starts from j^0 of the first frame (per-trajectory counter RNG
// streams, so results do not depend on the worker count) and integrate each
// worldline across the timeline.
inline WorldlineEnsemble integrate_worldline_ensemble(const StoredDiracTimeline& tl,
                                                      const DiracField& psi0, long count,
                                                      std::uint64_t master_seed, double dt,
                                                      int workers = 0,
                                                      double node_epsilon = 1e-9) {
  if (count < 1) throw ArgumentError("ensemble needs at least one worldline");
  const auto starts = sample_ensemble_starts(dirac_density_wavefunction(psi0), count,
                                             master_seed, workers);
  WorldlineEnsemble ens;
  ens.lines.resize(static_cast<std::size_t>(count));
  ens.finals.resize(static_cast<std::size_t>(count));
  ens.status.assign(static_cast<std::size_t>(count), TrajectoryStatus::completed);
  std::vector<double> speeds(static_cast<std::size_t>(count), 0.0);
  parallel_for_indices(resolve_worker_count(workers), count, [&](long i) {
    Worldline wl;
    const double x0 = starts[static_cast<std::size_t>(i)][0];
    try {
      wl = integrate_worldline(tl, x0, dt, node_epsilon);
    } catch (const NodeProximityError&) {  // start drawn into a node region
      wl.status = TrajectoryStatus::hit_node_region;
      wl.events.push_back({tl.t0(), x0, 0.0});
    }
    speeds[static_cast<std::size_t>(i)] = wl.max_speed();
    ens.status[static_cast<std::size_t>(i)] = wl.status;
    ens.finals[static_cast<std::size_t>(i)] = {wl.events.back().x};
    ens.lines[static_cast<std::size_t>(i)] = std::move(wl);
  });
  for (double s : speeds) ens.max_speed = std::max(ens.max_speed, s);
  return ens;
}

}  // namespace pilotwave
