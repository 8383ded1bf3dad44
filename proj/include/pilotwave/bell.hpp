#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pilotwave/bohm.hpp"
#include "pilotwave/constants.hpp"
#include "pilotwave/fock.hpp"
#include "pilotwave/rng.hpp"
#include "pilotwave/threadpool.hpp"

namespace pilotwave {

// Scalar jump law max{0, (2/hbar) Im[conj(psi_to) h_elem psi_from]} / |psi_from|^2.
// The Im term is antisymmetric under swapping the two configurations of a
// Hermitian kernel, so at most one direction of any pair is nonzero.
inline double bell_rate(cplx psi_to, cplx h_elem, cplx psi_from, double hbar) {
  const double dens = std::norm(psi_from);
  if (!(dens > 0.0)) throw UndefinedRateError("jump rate undefined at zero source density");
  const double num = std::imag(std::conj(psi_to) * h_elem * psi_from);
  return std::max(0.0, 2.0 / hbar * num / dens);
}

struct BellOptions {
  double node_epsilon = 1e-12;    // relative to the sector mean cell density
  double v_max = 1e12;            // speed cap for the in-sector motion
  double rate_window_max = 0.05;  // enforced bound on sigma_tot * window
  int max_refinement = 9;         // window halvings before a stiffness error
  int record_every = 1;           // micro-steps between recorded samples
};

// Index of the grid cell containing y (cells centered on grid points); -1
// outside a box grid, folded on periodic grids.
inline int profile_cell(const GridSpec& axis, double y) {
  const int n = axis.points_per_axis;
  double t = (y - axis.origin_offset[0]) / axis.spacing + 0.5;
  if (axis.boundary == Boundary::periodic) {
    t -= std::floor(t / n) * n;
    const int i = static_cast<int>(t);
    return i >= n ? n - 1 : i;
  }
  const int i = static_cast<int>(std::floor(t));
  return (i < 0 || i >= n) ? -1 : i;
}

namespace detail {

// Evaluation bundle for one frame interval: blended sector values, the
// profile table, and the process options.
struct BellContext {
  const FockFrame* fa = nullptr;
  const FockFrame* fb = nullptr;  // null evaluates fa alone
  const std::vector<double>* phi = nullptr;
  const std::vector<int>* support = nullptr;  // cells where phi != 0
  const GridSpec* axis = nullptr;
  const Constants* constants = nullptr;
  BellOptions opts;
  double frame_dt = 1.0;
  double t_frame = 0.0;  // time of frame fa

  double weight(double t) const { return fb ? (t - t_frame) / frame_dt : 0.0; }

  cplx empty_value(double w) const {
    return fb ? (1.0 - w) * fa->c0 + w * fb->c0 : fa->c0;
  }

  cplx sector_value(int n, const double* q, double w) const {
    cplx va, g[2];
    fa->sector[static_cast<std::size_t>(n) - 1]->eval(q, &va, g);
    if (!fb || w == 0.0) return va;
    cplx vb;
    fb->sector[static_cast<std::size_t>(n) - 1]->eval(q, &vb, g);
    return (1.0 - w) * va + w * vb;
  }

  double guard_scale(int n) const {
    return n == 0 ? 1.0 : fa->sector[static_cast<std::size_t>(n) - 1]->mean_density();
  }
};

struct JumpTable {
  double total = 0.0;
  std::vector<double> creation;    // rate mass per support cell
  std::vector<double> absorption;  // point rate per current particle
};

// Jump-rate tables at configuration q in `sector` for blend weight w. The
// creation entry of a cell carries the full ordered-destination multiplicity
// (the insertion index is drawn separately); absorption entries are the
// per-particle removal rates. Returns false under the node guard.
inline bool bell_rates(const BellContext& ctx, const double* q, int sector, double w,
                       JumpTable& out) {
  const std::size_t ns = ctx.support->size();
  out.creation.assign(ns, 0.0);
  out.absorption.assign(static_cast<std::size_t>(sector), 0.0);
  out.total = 0.0;

  const cplx from = sector == 0 ? ctx.empty_value(w) : ctx.sector_value(sector, q, w);
  const double rho = std::norm(from);
  if (!(rho > ctx.opts.node_epsilon * ctx.guard_scale(sector))) return false;
  const double g = ctx.constants->coupling;
  if (g == 0.0) return true;
  const double hbar = ctx.constants->hbar;

  if (sector < ctx.fa->truncation) {
    const double fac =
        2.0 * g * std::sqrt(sector + 1.0) / (hbar * rho) * ctx.axis->spacing;
    double dest[3];  // one slot of slack keeps the bound checkable
    for (int i = 0; i < sector; ++i) dest[i] = q[i];
    for (std::size_t s = 0; s < ns; ++s) {
      const int c = (*ctx.support)[s];
      dest[sector] = ctx.axis->coord(0, c);
      const cplx to = ctx.sector_value(sector + 1, dest, w);
      const double num = std::imag(std::conj(to) * (*ctx.phi)[static_cast<std::size_t>(c)] * from);
      if (num > 0.0) {
        out.creation[s] = fac * num;
        out.total += out.creation[s];
      }
    }
  }
  if (sector >= 1) {
    const double fac = 2.0 * g / (std::sqrt(static_cast<double>(sector)) * hbar * rho);
    double rest[2];
    for (int j = 0; j < sector; ++j) {
      const int c = profile_cell(*ctx.axis, q[j]);
      const double pj = c < 0 ? 0.0 : (*ctx.phi)[static_cast<std::size_t>(c)];
      if (pj == 0.0) continue;
      int m = 0;
      for (int i = 0; i < sector; ++i)
        if (i != j) rest[m++] = q[i];
      const cplx to = sector == 1 ? ctx.empty_value(w) : ctx.sector_value(sector - 1, rest, w);
      const double num = std::imag(std::conj(to) * pj * from);
      if (num > 0.0) {
        out.absorption[static_cast<std::size_t>(j)] = fac * num;
        out.total += out.absorption[static_cast<std::size_t>(j)];
      }
    }
  }
  return true;
}

// RK4 step of length h for the in-sector motion, stage weights taken at the
// absolute stage times. Sector 0 has nothing to move.
inline IntervalOutcome bell_motion(const BellContext& ctx, double* q, int sector, double t,
                                   double h, long& cap_hits) {
  if (sector == 0) return IntervalOutcome::ok;
  VelocityEvaluator ev;
  ev.a = ctx.fa->sector[static_cast<std::size_t>(sector) - 1].get();
  ev.b = ctx.fb ? ctx.fb->sector[static_cast<std::size_t>(sector) - 1].get() : nullptr;
  ev.constants = ctx.constants;
  ev.opts.node_epsilon = ctx.opts.node_epsilon;
  ev.opts.v_max = ctx.opts.v_max;
  ev.opts.sort_identical = sector > 1;
  ev.dim = sector;
  ev.coords_per_particle = 1;
  const double w0 = ctx.weight(t), wh = ctx.weight(t + 0.5 * h), w1 = ctx.weight(t + h);
  double k1[2], k2[2], k3[2], k4[2], stage[2];
  bool ok;
  try {
    ok = ev.velocity(q, w0, k1);
    if (ok) {
      for (int i = 0; i < sector; ++i) stage[i] = q[i] + 0.5 * h * k1[i];
      ok = ev.velocity(stage, wh, k2);
    }
    if (ok) {
      for (int i = 0; i < sector; ++i) stage[i] = q[i] + 0.5 * h * k2[i];
      ok = ev.velocity(stage, wh, k3);
    }
    if (ok) {
      for (int i = 0; i < sector; ++i) stage[i] = q[i] + h * k3[i];
      ok = ev.velocity(stage, w1, k4);
    }
  } catch (const OutOfDomainError&) {
    return IntervalOutcome::left;
  }
  if (!ok) return IntervalOutcome::node;
  for (int i = 0; i < sector; ++i)
    q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  cap_hits += ev.cap_hits;
  return IntervalOutcome::ok;
}

// One jump window [t, t+h): rates at the window start decide a Bernoulli jump
// applied at the window end (jump windows skip motion; the O(h) displacement
// bias vanishes with the step). Windows halve until sigma_tot * h is under
// the bound. Draws per window: one uniform always; destination, jitter and
// insertion index only when a jump fires.
template <typename OnJump>
IntervalOutcome bell_window(const BellContext& ctx, std::vector<double>& q, int& sector,
                            double t, double h, int depth, RngStream& rng, long& cap_hits,
                            JumpTable& table, OnJump&& on_jump) {
  bool have_rates;
  try {
    have_rates = bell_rates(ctx, q.data(), sector, ctx.weight(t), table);
  } catch (const OutOfDomainError&) {
    return IntervalOutcome::left;
  }
  if (!have_rates) return IntervalOutcome::node;

  if (table.total * h >= ctx.opts.rate_window_max) {
    if (depth >= ctx.opts.max_refinement)
      throw StiffnessError("total jump rate " + std::to_string(table.total) +
                           " stays too fast at window dt/" + std::to_string(1 << depth));
    const auto first =
        bell_window(ctx, q, sector, t, 0.5 * h, depth + 1, rng, cap_hits, table, on_jump);
    if (first != IntervalOutcome::ok) return first;
    return bell_window(ctx, q, sector, t + 0.5 * h, 0.5 * h, depth + 1, rng, cap_hits, table,
                       on_jump);
  }

  const double u = rng.uniform();
  if (u < -std::expm1(-table.total * h)) {
    Configuration before{sector, q};
    // categorical draw over creation cells then current particles
    double v = rng.uniform() * table.total;
    int cell = -1, particle = -1;
    for (std::size_t s = 0; s < table.creation.size(); ++s) {
      if (table.creation[s] <= 0.0) continue;
      if (v < table.creation[s]) {
        cell = (*ctx.support)[s];
        break;
      }
      v -= table.creation[s];
    }
    if (cell < 0)
      for (std::size_t j = 0; j < table.absorption.size(); ++j) {
        if (table.absorption[j] <= 0.0) continue;
        if (v < table.absorption[j]) {
          particle = static_cast<int>(j);
          break;
        }
        v -= table.absorption[j];
      }
    if (cell < 0 && particle < 0) {
      // fp underflow in the walk: take the largest entry
      double best = 0.0;
      for (std::size_t s = 0; s < table.creation.size(); ++s) {
        if (table.creation[s] > best) {
          best = table.creation[s];
          cell = (*ctx.support)[s];
        }
      }
      for (std::size_t j = 0; j < table.absorption.size(); ++j) {
        if (table.absorption[j] > best) {
          best = table.absorption[j];
          cell = -1;
          particle = static_cast<int>(j);
        }
      }
    }
    JumpKind kind;
    if (cell >= 0) {
      const double y =
          ctx.axis->coord(0, cell) + (rng.uniform() - 0.5) * ctx.axis->spacing;
      const auto idx = rng.uniform_below(static_cast<std::uint64_t>(sector) + 1);
      q.insert(q.begin() + static_cast<std::ptrdiff_t>(idx), y);
      ++sector;
      kind = JumpKind::emission;
    } else {
      q.erase(q.begin() + particle);
      --sector;
      kind = JumpKind::absorption;
    }
    on_jump(t + h, kind, before, Configuration{sector, q});
    return IntervalOutcome::ok;
  }
  return bell_motion(ctx, q.data(), sector, t, h, cap_hits);
}

inline std::vector<int> profile_support(const std::vector<double>& phi) {
  std::vector<int> support;
  for (std::size_t i = 0; i < phi.size(); ++i)
    if (phi[i] != 0.0) support.push_back(static_cast<int>(i));
  return support;
}

}  // namespace detail

// Rate density between two explicit configurations of a state, decided by the
// per-cell kernel g*phi(cell)/sqrt(n_high) linking adjacent sectors. Creation
// directions return a density with respect to the inserted coordinate;
// absorption directions return the point rate left after the kernel's
// remaining delta collapses the destination volume.
inline double bell_jump_rate_density(const FockState& state, const Configuration& q_from,
                                     const Configuration& q_to, const CutoffProfile& profile,
                                     const Constants& constants) {
  state.validate();
  q_from.validate(1);
  q_to.validate(1);
  const int ds = q_to.sector - q_from.sector;
  if (ds != 1 && ds != -1)
    throw ArgumentError("the kernel links adjacent sectors only");
  if (std::max(q_from.sector, q_to.sector) > state.truncation())
    throw ArgumentError("configuration sector above the truncation");

  const std::vector<double> phi = cutoff_values(profile, state.axis());
  const FockFrame frame = make_fock_frame(state);
  auto value = [&](const Configuration& c) -> cplx {
    if (c.sector == 0) return frame.c0;
    cplx v, g[2];
    frame.sector[static_cast<std::size_t>(c.sector) - 1]->eval(c.positions.data(), &v, g);
    return v;
  };

  // the configurations must differ by one inserted coordinate, order kept
  const Configuration& lo = ds > 0 ? q_from : q_to;
  const Configuration& hi = ds > 0 ? q_to : q_from;
  int inserted = -1;
  for (int k = 0; k < hi.sector && inserted < 0; ++k) {
    bool match = true;
    for (int i = 0, m = 0; i < hi.sector; ++i) {
      if (i == k) continue;
      if (hi.positions[static_cast<std::size_t>(i)] !=
          lo.positions[static_cast<std::size_t>(m++)]) {
        match = false;
        break;
      }
    }
    if (match) inserted = k;
  }
  if (inserted < 0)
    throw ArgumentError("configurations do not differ by a single insertion");

  const int c = profile_cell(state.axis(), hi.positions[static_cast<std::size_t>(inserted)]);
  const double kern = (c < 0 ? 0.0 : phi[static_cast<std::size_t>(c)]) * constants.coupling /
                      std::sqrt(static_cast<double>(hi.sector));
  return bell_rate(value(q_to), kern, value(q_from), constants.hbar);
}

// Piecewise-deterministic trajectory through the sector ladder: Bohm motion
// inside the current sector, stochastic jumps between adjacent sectors with
// the rate law above. Samples land on the micro-step grid; every jump forces
// a sample at its own time.
inline TrajectoryRecord simulate_bell_process(FockTimeline& timeline, const Configuration& q0,
                                              double dt, const Constants& constants,
                                              RngStream& rng, const BellOptions& opts = {}) {
  const int substeps = detail::substeps_for(timeline.frame_dt(), dt);
  const FockFrame& f0 = timeline.frame(0);
  if (q0.sector > f0.truncation)
    throw ArgumentError("q0 sector above the sector truncation");
  q0.validate(1);
  if (opts.record_every < 1) throw ArgumentError("record_every must be >= 1");

  const std::vector<int> support = detail::profile_support(timeline.phi());

  TrajectoryRecord rec;
  std::vector<double> q = q0.positions;
  int sector = q0.sector;
  rec.samples.push_back({timeline.t0(), q0});

  detail::BellContext ctx;
  ctx.phi = &timeline.phi();
  ctx.support = &support;
  ctx.axis = &timeline.axis();
  ctx.constants = &constants;
  ctx.opts = opts;
  ctx.frame_dt = timeline.frame_dt();

  auto push_sample = [&](double t, Configuration cfg) {
    if (!rec.samples.empty() && rec.samples.back().first == t)
      rec.samples.back().second = std::move(cfg);
    else
      rec.samples.push_back({t, std::move(cfg)});
  };
  auto on_jump = [&](double tj, JumpKind kind, const Configuration& from,
                     const Configuration& to) {
    rec.jumps.push_back({tj, kind, from, to});
    push_sample(tj, to);
  };

  detail::JumpTable table;
  long cap_hits = 0, step = 0;
  const long last_step = static_cast<long>(timeline.frame_count() - 1) * substeps;
  for (int k = 0; k + 1 < timeline.frame_count(); ++k) {
    ctx.fa = &timeline.frame(k);
    ctx.fb = &timeline.frame(k + 1);
    ctx.t_frame = timeline.t0() + k * timeline.frame_dt();
    bool alive = true;
    for (int j = 0; j < substeps && alive; ++j) {
      const double t = ctx.t_frame + j * dt;
      const auto outcome =
          detail::bell_window(ctx, q, sector, t, dt, 0, rng, cap_hits, table, on_jump);
      if (outcome != detail::IntervalOutcome::ok) {
        rec.status = outcome == detail::IntervalOutcome::node ? TrajectoryStatus::hit_node_region
                                                              : TrajectoryStatus::left_domain;
        alive = false;
        break;
      }
      ++step;
      if (step % opts.record_every == 0 || step == last_step)
        push_sample(t + dt, Configuration{sector, q});
    }
    if (!alive) break;
  }
  rec.capped_steps = cap_hits;
  return rec;
}

struct SectorTally {
  std::array<long, 3> count{0, 0, 0};
  long valid = 0;
  double frequency(int n) const {
    return valid > 0 ? static_cast<double>(count[static_cast<std::size_t>(n)]) /
                           static_cast<double>(valid)
                     : 0.0;
  }
};

struct BellEnsembleOptions {
  double dt = 0.01;
  BellOptions process;
  int workers = 0;                     // 0 defers to the environment override
  std::vector<int> checkpoint_frames;  // frame indices to tally occupation at
};

struct BellEnsembleResult {
  std::vector<Configuration> finals;
  std::vector<TrajectoryStatus> status;
  std::vector<long> jump_counts;
  long capped_steps = 0;
  std::vector<SectorTally> occupation;  // one tally per checkpoint frame

  long excluded() const {
    long n = 0;
    for (auto s : status)
      if (s != TrajectoryStatus::completed) ++n;
    return n;
  }
};

// Lockstep ensemble of jump-process trajectories over one streamed timeline.
// Starts are drawn from the initial state's sector-resolved |psi|^2; each
// trajectory owns the stream (master_seed, index), so results are bitwise
// independent of the worker count.
inline BellEnsembleResult run_bell_ensemble(FockTimeline& timeline, long count,
                                            std::uint64_t master_seed,
                                            const Constants& constants,
                                            const BellEnsembleOptions& opts = {}) {
  if (count <= 0) throw ArgumentError("ensemble size must be positive");
  const int substeps = detail::substeps_for(timeline.frame_dt(), opts.dt);
  for (int f : opts.checkpoint_frames)
    if (f < 0 || f >= timeline.frame_count())
      throw ArgumentError("checkpoint frame outside the timeline");
  const int workers = resolve_worker_count(opts.workers);
  const std::vector<int> support = detail::profile_support(timeline.phi());

  const FockSampler sampler(timeline.initial_state());
  std::vector<RngStream> streams;
  streams.reserve(static_cast<std::size_t>(count));
  std::vector<int> sectors(static_cast<std::size_t>(count));
  std::vector<std::vector<double>> coords(static_cast<std::size_t>(count));
  std::vector<TrajectoryStatus> status(static_cast<std::size_t>(count),
                                       TrajectoryStatus::completed);
  std::vector<long> jump_counts(static_cast<std::size_t>(count), 0);
  std::vector<long> capped(static_cast<std::size_t>(count), 0);
  for (long i = 0; i < count; ++i) {
    streams.emplace_back(master_seed, static_cast<std::uint64_t>(i));
    Configuration c = sampler.draw(streams.back());
    sectors[static_cast<std::size_t>(i)] = c.sector;
    coords[static_cast<std::size_t>(i)] = std::move(c.positions);
  }

  BellEnsembleResult res;
  res.status = std::move(status);
  res.jump_counts = std::move(jump_counts);

  res.occupation.resize(opts.checkpoint_frames.size());
  auto tally = [&](int frame_index) {
    for (std::size_t c = 0; c < opts.checkpoint_frames.size(); ++c) {
      if (opts.checkpoint_frames[c] != frame_index) continue;
      SectorTally t;
      for (long i = 0; i < count; ++i) {
        if (res.status[static_cast<std::size_t>(i)] != TrajectoryStatus::completed) continue;
        ++t.count[static_cast<std::size_t>(sectors[static_cast<std::size_t>(i)])];
        ++t.valid;
      }
      res.occupation[c] = t;
    }
  };
  tally(0);

  detail::BellContext ctx;
  ctx.phi = &timeline.phi();
  ctx.support = &support;
  ctx.axis = &timeline.axis();
  ctx.constants = &constants;
  ctx.opts = opts.process;
  ctx.frame_dt = timeline.frame_dt();

  for (int k = 0; k + 1 < timeline.frame_count(); ++k) {
    ctx.fa = &timeline.frame(k);
    ctx.fb = &timeline.frame(k + 1);
    ctx.t_frame = timeline.t0() + k * timeline.frame_dt();
    parallel_for_indices(workers, count, [&](long i) {
      const auto ui = static_cast<std::size_t>(i);
      if (res.status[ui] != TrajectoryStatus::completed) return;
      thread_local detail::JumpTable table;
      int sec = sectors[ui];
      auto on_jump = [&](double, JumpKind, const Configuration&, const Configuration&) {
        ++res.jump_counts[ui];
      };
      for (int j = 0; j < substeps; ++j) {
        const double t = ctx.t_frame + j * opts.dt;
        const auto outcome = detail::bell_window(ctx, coords[ui], sec, t, opts.dt, 0,
                                                 streams[ui], capped[ui], table, on_jump);
        if (outcome != detail::IntervalOutcome::ok) {
          res.status[ui] = outcome == detail::IntervalOutcome::node
                               ? TrajectoryStatus::hit_node_region
                               : TrajectoryStatus::left_domain;
          return;
        }
      }
      sectors[ui] = sec;
    });
    tally(k + 1);
  }

  res.finals.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    res.finals.push_back(Configuration{sectors[ui], coords[ui]});
    res.capped_steps += capped[ui];
  }
  return res;
}

}  // namespace pilotwave
