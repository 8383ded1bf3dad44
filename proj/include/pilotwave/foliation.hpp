#pragma once
// Spacelike foliations of 1+1 Minkowski space as leaf graphs t = f(s, x),
// the two-particle tensor current, and the hypersurface pair dynamics with
// its on-leaf equivariance experiment.
//
// Leaf normals: with signature (+,-) the graph t = f has unit conormal
// n_mu = (1, -f_x)/sqrt(1 - f_x^2).  Contractions below use unnormalized
// conormal components m_mu = (1, -f_x) where only directions or ratios
// matter; the normalization cancels there.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <ostream>
#include <utility>
#include <vector>

#include "pilotwave/dirac.hpp"
#include "pilotwave/equivariance.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/multitime.hpp"
#include "pilotwave/spline.hpp"
#include "pilotwave/threadpool.hpp"

namespace pilotwave {

// Family of spacelike leaves t = f(s, x), validated at construction on a
// sampled (s, x) window: |df/dx| <= 0.95 (spacelike with margin 0.05) and
// df/ds > 0 (leaves cover the slab monotonically).  The callables must be
// total on every (s, x) the dynamics visits; the window bounds only the
// validation sweep.
struct Foliation {
  std::function<double(double, double)> f;      // leaf time
  std::function<double(double, double)> slope;  // df/dx
  double s_lo = 0.0, s_hi = 1.0;
  double x_lo = -1.0, x_hi = 1.0;
  double slope_bound = 0.0;  // sampled sup |df/dx|
  double fs_max = 0.0;       // sampled sup df/ds

  Foliation(std::function<double(double, double)> f_in,
            std::function<double(double, double)> slope_in, double s_lo_in, double s_hi_in,
            double x_lo_in, double x_hi_in)
      : f(std::move(f_in)),
        slope(std::move(slope_in)),
        s_lo(s_lo_in),
        s_hi(s_hi_in),
        x_lo(x_lo_in),
        x_hi(x_hi_in) {
    if (!f || !slope) throw ArgumentError("foliation needs leaf and slope callables");
    if (!(s_hi > s_lo) || !(x_hi > x_lo)) throw ArgumentError("empty foliation window");
    const int ns = 48, nx = 48;  // even interval count so the window midpoint is sampled
    const double eps_s = 1e-5 * std::max(1.0, std::abs(s_hi) + std::abs(s_lo));
    for (int i = 0; i <= ns; ++i) {
      const double s = s_lo + (s_hi - s_lo) * static_cast<double>(i) / ns;
      for (int j = 0; j <= nx; ++j) {
        const double x = x_lo + (x_hi - x_lo) * static_cast<double>(j) / nx;
        const double fx = slope(s, x);
        if (!(std::abs(fx) <= 0.95))
          throw FoliationError("leaf slope exceeds the spacelike bound 0.95");
        const double fd = (f(s, x + 1e-5) - f(s, x - 1e-5)) / 2e-5;
        if (!(std::abs(fd - fx) <= 1e-3 * (1.0 + std::abs(fx))))
          throw FoliationError("slope callable disagrees with the leaf function");
        const double fs = (f(s + eps_s, x) - f(s - eps_s, x)) / (2.0 * eps_s);
        if (!(fs > 1e-6)) throw FoliationError("leaves do not advance monotonically in s");
        slope_bound = std::max(slope_bound, std::abs(fx));
        fs_max = std::max(fs_max, fs);
      }
    }
  }

  double time(double s, double x) const { return f(s, x); }
  double slope_at(double s, double x) const { return slope(s, x); }
  // numerical df/ds; the validation sweep guarantees positivity on the window
  double rate(double s, double x) const {
    const double e = 1e-5 * std::max(1.0, std::abs(s));
    return (f(s + e, x) - f(s - e, x)) / (2.0 * e);
  }
};

inline Foliation make_flat_foliation(double v, double s_lo = 0.0, double s_hi = 16.0,
                                     double x_lo = -32.0, double x_hi = 32.0) {
  return Foliation([v](double s, double x) { return s + v * x; },
                   [v](double, double) { return v; }, s_lo, s_hi, x_lo, x_hi);
}

inline Foliation make_tanh_foliation(double a, double s_lo = 0.0, double s_hi = 16.0,
                                     double x_lo = -32.0, double x_hi = 32.0) {
  return Foliation([a](double s, double x) { return s + a * std::tanh(x); },
                   [a](double, double x) {
                     const double c = std::cosh(x);
                     return a / (c * c);
                   },
                   s_lo, s_hi, x_lo, x_hi);
}

inline std::vector<double> leaf_times(const Foliation& fol, double s, long n, double x0,
                                      double h) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) t[i] = fol.time(s, x0 + h * static_cast<double>(i));
  return t;
}

// --- tensor current ----------------------------------------------------------

// Components of psibar [gamma^mu (x) gamma^nu] psi for one spinor block
// psi_ab (a slot 1, b slot 2).  All four are real; j00 >= |j10|, |j01|.
struct PairCurrent {
  double j00 = 0.0;
  double j10 = 0.0;
  double j01 = 0.0;
  double j11 = 0.0;
};

inline PairCurrent pair_current(const std::array<cplx, 4>& p) {
  PairCurrent c;
  c.j00 = std::norm(p[0]) + std::norm(p[1]) + std::norm(p[2]) + std::norm(p[3]);
  c.j10 = 2.0 * std::real(std::conj(p[0]) * p[2] + std::conj(p[1]) * p[3]);
  c.j01 = 2.0 * std::real(std::conj(p[0]) * p[1] + std::conj(p[2]) * p[3]);
  c.j11 = 2.0 * std::real(std::conj(p[0]) * p[3] + std::conj(p[1]) * p[2]);
  return c;
}

// Single-particle reduction: with no partner slots to contract the tangent
// is the plain current of the spinor.
inline std::array<double, 2> single_particle_tangent(const std::array<cplx, 2>& spinor) {
  const DiracCurrent c = spinor_current(spinor[0], spinor[1]);
  return {c.j0, c.j1};
}

// Per-particle worldline tangents (components (dt, dx) up to a common
// positive factor) and the leaf density rho = j^{mu nu} n_mu n_nu with unit
// normals.  fx1/fx2 are the leaf slopes at the two positions.
struct BmfTangents {
  std::array<double, 2> particle1{};
  std::array<double, 2> particle2{};
  double rho = 0.0;
};

inline BmfTangents bmf_tangents_from(const std::array<cplx, 4>& block, double fx1, double fx2) {
  const PairCurrent c = pair_current(block);
  const double r1 = std::sqrt(1.0 - fx1 * fx1);
  const double r2 = std::sqrt(1.0 - fx2 * fx2);
  BmfTangents out;
  // contract the partner slot with its lowered unit normal (1, -fx)/r
  out.particle1 = {(c.j00 - fx2 * c.j01) / r2, (c.j10 - fx2 * c.j11) / r2};
  out.particle2 = {(c.j00 - fx1 * c.j10) / r1, (c.j01 - fx1 * c.j11) / r1};
  out.rho = (out.particle1[0] - fx1 * out.particle1[1]) / r1;
  return out;
}

inline BmfTangents bmf_velocities(const MultiTimeEvaluator& phi, const Foliation& fol, double s,
                                  double x1, double x2, double node_epsilon = 1e-12) {
  const double t1 = fol.time(s, x1);
  const double t2 = fol.time(s, x2);
  const BmfTangents out =
      bmf_tangents_from(phi.point(t1, x1, t2, x2), fol.slope_at(s, x1), fol.slope_at(s, x2));
  if (!(out.rho > node_epsilon))
    throw NodeProximityError("pair density vanishes at the requested configuration");
  return out;
}

inline BmfTangents bmf_velocities(const MultiTimeWF& phi, const Foliation& fol, double s,
                                  double x1, double x2, double node_epsilon = 1e-12) {
  return bmf_velocities(MultiTimeEvaluator(phi), fol, s, x1, x2, node_epsilon);
}

// --- on-leaf equivariance experiment -----------------------------------------

struct BmfOptions {
  double ds_cap = 0.0;         // 0: derive from the foliation bounds
  double node_epsilon = 1e-9;  // relative to the mean leaf density
  int bins = 16;
  int workers = 0;
  long record = 0;  // keep full worldlines for the first `record` trajectories
};

struct BmfWorldlineRow {
  double s = 0.0;
  double t1 = 0.0, x1 = 0.0;
  double t2 = 0.0, x2 = 0.0;
};

struct BmfResult {
  EnsembleReport report;
  std::vector<std::vector<double>> finals;  // (x1, x2) on the arrival leaf
  std::vector<TrajectoryStatus> status;
  double max_speed = 0.0;  // worst |dx/dt| over all recorded stage evaluations
  double ds = 0.0;
  long steps = 0;
  std::vector<std::vector<BmfWorldlineRow>> recorded;
};

namespace detail {

// One leaf of the pair dynamics: bicubic splines of the four spinor
// components plus the mean coordinate density for the node guard.
struct BmfStage {
  std::array<std::shared_ptr<const Spline2D>, 4> comp;
  double s = 0.0;
  double mean_q = 0.0;
};

// coordinate density q = psibar [m-slash (x) m-slash] psi with unnormalized
// conormals; equals rho times the two induced-measure factors, so sampling
// x-space cells from q realizes the rho-distribution on the leaf
inline double bmf_coordinate_density(const PairCurrent& c, double fx1, double fx2) {
  return c.j00 - fx2 * c.j01 - fx1 * c.j10 + fx1 * fx2 * c.j11;
}

inline BmfStage make_bmf_stage(const MultiTimeWF& phi, const Foliation& fol, double s) {
  const long n = phi.points;
  const LeafField lf = restrict_to_leaf(phi, leaf_times(fol, s, n, phi.x0, phi.spacing));
  BmfStage st;
  st.s = s;
  cvec g(static_cast<std::size_t>(n) * n);
  for (int c = 0; c < 4; ++c) {
    for (long cell = 0; cell < n * n; ++cell) g[cell] = lf.values[cell * 4 + c];
    st.comp[c] = std::make_shared<Spline2D>(g, static_cast<int>(n),
                                            std::array<double, 2>{phi.x0, phi.x0}, phi.spacing,
                                            true);
  }
  double acc = 0.0;
  for (long i1 = 0; i1 < n; ++i1) {
    const double fx1 = fol.slope_at(s, phi.coord(i1));
    for (long i2 = 0; i2 < n; ++i2) {
      const double fx2 = fol.slope_at(s, phi.coord(i2));
      acc += bmf_coordinate_density(pair_current(lf.block(i1, i2)), fx1, fx2);
    }
  }
  st.mean_q = acc / static_cast<double>(n * n);
  return st;
}

}  // namespace detail

// q on the leaf Sigma_s wrapped as a two-axis grid density, ready for the
// shared samplers and histogram reports.
inline GridWavefunction bmf_leaf_density(const MultiTimeWF& phi, const Foliation& fol,
                                         double s) {
  const long n = phi.points;
  const LeafField lf = restrict_to_leaf(phi, leaf_times(fol, s, n, phi.x0, phi.spacing));
  GridWavefunction out;
  out.spec = GridSpec::make(2, static_cast<int>(n), phi.spacing, {phi.x0, phi.x0},
                            Boundary::periodic);
  out.time = s;
  out.amp.resize(static_cast<std::size_t>(n) * n);
  for (long i1 = 0; i1 < n; ++i1) {
    const double fx1 = fol.slope_at(s, phi.coord(i1));
    for (long i2 = 0; i2 < n; ++i2) {
      const double fx2 = fol.slope_at(s, phi.coord(i2));
      const double q =
          detail::bmf_coordinate_density(pair_current(lf.block(i1, i2)), fx1, fx2);
      out.amp[i1 * n + i2] = std::sqrt(std::max(q, 0.0));
    }
  }
  return out;
}

// Sample pair configurations from the leaf density on Sigma_{s0}, advance
// them leaf-to-leaf to Sigma_{s1} (classic RK4 in the leaf parameter, all
// trajectories sharing each leaf's spline fields), and compare the arrival
// histogram against the leaf density on Sigma_{s1}.
inline BmfResult run_bmf_equivariance(const MultiTimeWF& phi0, const Foliation& fol, double s0,
                                      double s1, long count, std::uint64_t master_seed,
                                      const BmfOptions& opts = {}) {
  phi0.check_shape();
  if (count < 1) throw ArgumentError("ensemble needs at least one trajectory");
  if (!(s0 >= fol.s_lo && s1 <= fol.s_hi && s0 <= s1))
    throw ArgumentError("leaf parameters must satisfy s_lo <= s0 <= s1 <= s_hi");
  if (opts.bins < 2) throw ArgumentError("need at least two bins per axis");
  const long n = phi0.points;
  const double h = phi0.spacing;
  const double x_lo = phi0.x0;
  const double length = h * static_cast<double>(n);

  // fixed global step: worst-case displacement per step <= 0.5 h
  double ds_cap = opts.ds_cap;
  if (!(ds_cap > 0.0)) ds_cap = 0.5 * h * (1.0 - fol.slope_bound) / (1.25 * fol.fs_max);
  const long steps = s1 > s0 ? static_cast<long>(std::ceil((s1 - s0) / ds_cap - 1e-12)) : 0;
  const double ds = steps > 0 ? (s1 - s0) / static_cast<double>(steps) : 0.0;

  const GridWavefunction q0 = bmf_leaf_density(phi0, fol, s0);
  const auto starts = sample_ensemble_starts(q0, count, master_seed, opts.workers);

  std::vector<std::array<double, 2>> pos(static_cast<std::size_t>(count));
  std::vector<TrajectoryStatus> status(static_cast<std::size_t>(count),
                                       TrajectoryStatus::completed);
  std::vector<double> speeds(static_cast<std::size_t>(count), 0.0);
  BmfResult res;
  res.recorded.resize(static_cast<std::size_t>(std::min<long>(opts.record, count)));
  for (long i = 0; i < count; ++i) {
    pos[static_cast<std::size_t>(i)] = {starts[static_cast<std::size_t>(i)][0],
                                        starts[static_cast<std::size_t>(i)][1]};
    if (i < opts.record) {
      const auto& p = pos[static_cast<std::size_t>(i)];
      res.recorded[static_cast<std::size_t>(i)].push_back(
          {s0, fol.time(s0, p[0]), p[0], fol.time(s0, p[1]), p[1]});
    }
  }

  detail::BmfStage stage_a = detail::make_bmf_stage(phi0, fol, s0);
  const double fold_lo = x_lo;
  auto tangent = [&](const detail::BmfStage& st, double x1, double x2, double* d1, double* d2,
                     double* speed) {
    const double x1f = detail::fold_periodic(x1, fold_lo, length);
    const double x2f = detail::fold_periodic(x2, fold_lo, length);
    std::array<cplx, 4> blk;
    for (int c = 0; c < 4; ++c) st.comp[c]->eval(x1f, x2f, &blk[c], nullptr, nullptr);
    const double fx1 = fol.slope_at(st.s, x1f);
    const double fx2 = fol.slope_at(st.s, x2f);
    const PairCurrent cur = pair_current(blk);
    const double q = detail::bmf_coordinate_density(cur, fx1, fx2);
    if (!(q > opts.node_epsilon * st.mean_q)) return false;
    // particle-k current contracted with the partner's (unnormalized)
    // conormal; ratios are normalization-free
    const double j1t = cur.j00 - fx2 * cur.j01, j1x = cur.j10 - fx2 * cur.j11;
    const double j2t = cur.j00 - fx1 * cur.j10, j2x = cur.j01 - fx1 * cur.j11;
    *speed = std::max(std::abs(j1x / j1t), std::abs(j2x / j2t));
    *d1 = fol.rate(st.s, x1f) * j1x / (j1t - fx1 * j1x);
    *d2 = fol.rate(st.s, x2f) * j2x / (j2t - fx2 * j2x);
    return true;
  };

  for (long k = 0; k < steps; ++k) {
    const double sa = s0 + ds * static_cast<double>(k);
    const detail::BmfStage stage_m = detail::make_bmf_stage(phi0, fol, sa + 0.5 * ds);
    const detail::BmfStage stage_b = detail::make_bmf_stage(phi0, fol, sa + ds);
    parallel_for_indices(resolve_worker_count(opts.workers), count, [&](long i) {
      const auto u = static_cast<std::size_t>(i);
      if (status[u] != TrajectoryStatus::completed) return;
      double& x1 = pos[u][0];
      double& x2 = pos[u][1];
      double a1 = 0, a2 = 0, b1 = 0, b2 = 0, c1 = 0, c2 = 0, d1 = 0, d2 = 0, sp = 0;
      double smax = 0.0;
      bool ok = tangent(stage_a, x1, x2, &a1, &a2, &sp);
      smax = std::max(smax, sp);
      ok = ok && tangent(stage_m, x1 + 0.5 * ds * a1, x2 + 0.5 * ds * a2, &b1, &b2, &sp);
      smax = std::max(smax, sp);
      ok = ok && tangent(stage_m, x1 + 0.5 * ds * b1, x2 + 0.5 * ds * b2, &c1, &c2, &sp);
      smax = std::max(smax, sp);
      ok = ok && tangent(stage_b, x1 + ds * c1, x2 + ds * c2, &d1, &d2, &sp);
      smax = std::max(smax, sp);
      if (!ok) {
        status[u] = TrajectoryStatus::hit_node_region;
        return;
      }
      x1 += ds / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1);
      x2 += ds / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2);
      speeds[u] = std::max(speeds[u], smax);
      if (i < opts.record) {
        // record the configuration on the compactified leaf
        const double x1f = detail::fold_periodic(x1, fold_lo, length);
        const double x2f = detail::fold_periodic(x2, fold_lo, length);
        res.recorded[u].push_back(
            {stage_b.s, fol.time(stage_b.s, x1f), x1f, fol.time(stage_b.s, x2f), x2f});
      }
    });
    stage_a = stage_b;
  }

  res.finals.resize(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    res.finals[u] = {pos[u][0], pos[u][1]};
  }
  res.status = std::move(status);
  for (double s : speeds) res.max_speed = std::max(res.max_speed, s);
  res.ds = ds;
  res.steps = steps;

  const GridWavefunction q1 = s1 > s0 ? bmf_leaf_density(phi0, fol, s1) : q0;
  BinningSpec binning;
  binning.bins = opts.bins;
  binning.axes = 2;
  res.report = build_ensemble_report(res.finals, res.status, q1, binning);
  if (res.report.excluded_fraction > 0.01)
    throw ExperimentInvalidError("more than 1% of pair trajectories were excluded");
  return res;
}

inline void write_bmf_worldlines_csv(const BmfResult& res, std::ostream& os) {
  os << "trajectory_id,s,t1,x1,t2,x2\n";
  char line[256];
  for (std::size_t id = 0; id < res.recorded.size(); ++id)
    for (const auto& r : res.recorded[id]) {
      std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", id, r.s, r.t1,
                    r.x1, r.t2, r.x2);
      os << line;
    }
}

}  // namespace pilotwave
