#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "pilotwave/bohm.hpp"
#include "pilotwave/propagator.hpp"
#include "pilotwave/rng.hpp"
#include "pilotwave/sampling.hpp"
#include "pilotwave/stats.hpp"
#include "pilotwave/threadpool.hpp"

namespace pilotwave {

// Timeline that propagates the wave on demand instead of storing every
// snapshot: only the newest two frames are alive, so long 2D runs stay in
// memory. Frames must be requested in forward order.
class PropagatedTimeline : public WaveTimeline {
 public:
  PropagatedTimeline(GridWavefunction psi0, std::vector<double> potential, Constants constants,
                     double frame_dt, int frame_count, int steps_per_frame = 1,
                     std::vector<double> absorber = {})
      : state_(std::move(psi0)),
        potential_(std::move(potential)),
        absorber_(std::move(absorber)),
        constants_(std::move(constants)),
        t0_(state_.time),
        frame_dt_(frame_dt),
        frame_count_(frame_count),
        steps_per_frame_(steps_per_frame) {
    if (frame_count_ < 2) throw ArgumentError("timeline needs >= 2 snapshots");
    if (!(frame_dt_ > 0.0) || steps_per_frame_ < 1) throw ArgumentError("bad frame stepping");
  }

  double t0() const override { return t0_; }
  double frame_dt() const override { return frame_dt_; }
  int frame_count() const override { return frame_count_; }

  const WaveFrame& frame(int k) override {
    if (k < 0 || k >= frame_count_) throw Error("timeline frame out of range");
    for (auto& [idx, f] : cache_)
      if (idx == k) return *f;
    if (k < newest_) throw Error("propagated timeline is forward-only");
    while (newest_ < k) {
      const double dt = frame_dt_ / steps_per_frame_;
      for (int s = 0; s < steps_per_frame_; ++s)
        state_ = evolve_schrodinger(state_, potential_, dt, constants_,
                                    absorber_.empty() ? nullptr : &absorber_);
      ++newest_;
    }
    auto f = std::make_shared<SplineFrame>(state_);
    cache_[slot_] = {k, f};
    slot_ ^= 1;
    return *f;
  }

  // state at the newest frame built so far
  const GridWavefunction& state() const { return state_; }

 private:
  GridWavefunction state_;
  std::vector<double> potential_, absorber_;
  Constants constants_;
  double t0_, frame_dt_;
  int frame_count_, steps_per_frame_;
  int newest_ = 0;
  std::pair<int, std::shared_ptr<SplineFrame>> cache_[2]{{-1, nullptr}, {-1, nullptr}};
  int slot_ = 0;
};

struct EnsembleOptions {
  double dt = 0.0;  // micro step; must divide the timeline frame interval
  MotionOptions motion;
  int workers = 0;  // 0 -> resolve_worker_count()
};

struct EnsembleResult {
  std::vector<std::vector<double>> positions;  // raw final configurations
  std::vector<TrajectoryStatus> status;
  std::vector<long> capped;

  long excluded() const {
    long e = 0;
    for (auto s : status) e += (s != TrajectoryStatus::completed);
    return e;
  }
};

// Per-step hook: (trajectory index, t_before, t_after, q_after). Runs inside
// worker threads; it must only write state private to its index.
using StepObserver = std::function<void(long, double, double, const double*)>;

// Lockstep ensemble sweep: for each frame interval the two frames are built
// once, then every live trajectory advances through it. Results are invariant
// under the worker count because each index owns its output slots.
inline EnsembleResult evolve_ensemble(WaveTimeline& timeline,
                                      std::vector<std::vector<double>> starts,
                                      const EnsembleOptions& opts, const Constants& constants,
                                      const StepObserver& observer = {}) {
  const int workers = resolve_worker_count(opts.workers);
  const int substeps = detail::substeps_for(timeline.frame_dt(), opts.dt);
  EnsembleResult res;
  res.positions = std::move(starts);
  const long n = static_cast<long>(res.positions.size());
  res.status.assign(n, TrajectoryStatus::completed);
  res.capped.assign(n, 0);
  if (n == 0) return res;
  const int dim = static_cast<int>(res.positions[0].size());
  if (opts.motion.sector < 1 || dim % opts.motion.sector != 0)
    throw ArgumentError("sector does not divide configuration dimension");
  for (const auto& p : res.positions)
    if (static_cast<int>(p.size()) != dim) throw ArgumentError("ragged ensemble start");

  for (int k = 0; k + 1 < timeline.frame_count(); ++k) {
    const WaveFrame& a = timeline.frame(k);
    const WaveFrame& b = timeline.frame(k + 1);
    const double t_base = timeline.t0() + k * timeline.frame_dt();
    parallel_for_indices(workers, n, [&](long i) {
      if (res.status[i] != TrajectoryStatus::completed) return;
      detail::VelocityEvaluator ev;
      ev.a = &a;
      ev.b = &b;
      ev.constants = &constants;
      ev.opts = opts.motion;
      ev.dim = dim;
      ev.coords_per_particle = dim / opts.motion.sector;
      const auto out = detail::advance_interval(
          ev, res.positions[i].data(), dim, t_base, opts.dt, substeps,
          [&](double ta, double tb, const double* qq) {
            if (observer) observer(i, ta, tb, qq);
          });
      res.capped[i] += ev.cap_hits;
      if (out == detail::IntervalOutcome::node)
        res.status[i] = TrajectoryStatus::hit_node_region;
      else if (out == detail::IntervalOutcome::left)
        res.status[i] = TrajectoryStatus::left_domain;
    });
  }
  return res;
}

// |ψ₀|² draws with one Philox stream per trajectory (stream_id = index), so
// the ensemble is reproducible under any worker count and any later
// stochastic dynamics continue from the same per-trajectory stream.
inline std::vector<std::vector<double>> sample_ensemble_starts(const GridWavefunction& psi0,
                                                               long count,
                                                               std::uint64_t master_seed,
                                                               int workers = 0) {
  if (count < 0) throw ArgumentError("negative ensemble size");
  DensitySampler sampler(psi0);
  std::vector<std::vector<double>> out(count);
  parallel_for_indices(resolve_worker_count(workers), count, [&](long i) {
    RngStream rng(master_seed, static_cast<std::uint64_t>(i));
    out[i] = sampler.draw(rng);
  });
  return out;
}

// How final configurations are binned for an EnsembleReport.
struct BinningSpec {
  int bins = 32;              // per axis
  int axes = 1;               // 1: marginal along `axis`; 2: joint over axes 0,1
  int axis = 0;               // marginal axis when axes == 1
  double lo = 0.0, hi = 0.0;  // window per binned axis; lo == hi -> full domain
};

namespace detail {

inline double fold_periodic(double x, double lo, double len) {
  double y = std::fmod(x - lo, len);
  if (y < 0.0) y += len;
  return lo + y;
}

// per-cell |ψ|² masses marginalized onto one axis
inline std::vector<double> axis_masses(const GridWavefunction& psi, int axis) {
  const auto& s = psi.spec;
  std::vector<double> m(s.points_per_axis, 0.0);
  std::size_t stride = 1;
  for (int a = s.dim - 1; a > axis; --a) stride *= s.points_per_axis;
  for (std::size_t i = 0; i < psi.amp.size(); ++i)
    m[(i / stride) % s.points_per_axis] += std::norm(psi.amp[i]) * s.cell_volume();
  return m;
}

// Overlap fractions of the cell [center - h/2, center + h/2) with a uniform
// binning of [lo, hi); cells and bins need not nest. Matches the sampler's
// piecewise-uniform jitter exactly, so the theoretical histogram is the true
// distribution of the drawn samples for any bin layout.
inline void cell_bin_overlaps(double center, double h, double lo, double hi, int nb,
                              std::vector<std::pair<int, double>>& out) {
  out.clear();
  const double a = std::max(center - 0.5 * h, lo);
  const double b = std::min(center + 0.5 * h, hi);
  if (b <= a) return;
  const double bw = (hi - lo) / nb;
  int j0 = std::clamp(static_cast<int>(std::floor((a - lo) / bw)), 0, nb - 1);
  int j1 = std::clamp(static_cast<int>(std::floor((b - lo) / bw)), 0, nb - 1);
  for (int j = j0; j <= j1; ++j) {
    const double ov = std::min(b, lo + (j + 1) * bw) - std::max(a, lo + j * bw);
    if (ov > 0.0) out.push_back({j, ov / h});
  }
}

}  // namespace detail

// Bins completed trajectories, bins |ψ_target|² the same way, and fills all
// three distance metrics (KS only for 1-axis binning). Node/domain exits from
// `status` feed excluded_fraction; out-of-window samples are dropped from
// both sides consistently (window-conditional comparison).
inline EnsembleReport build_ensemble_report(const std::vector<std::vector<double>>& finals,
                                            const std::vector<TrajectoryStatus>& status,
                                            const GridWavefunction& target,
                                            const BinningSpec& binning) {
  target.check_shape();
  const auto& spec = target.spec;
  if (finals.size() != status.size()) throw ArgumentError("finals/status length mismatch");
  if (binning.axes != 1 && binning.axes != 2) throw ArgumentError("binning axes must be 1 or 2");
  if (binning.axes == 2 && spec.dim != 2)
    throw ArgumentError("joint binning needs a 2-d configuration");
  if (binning.axes == 1 && (binning.axis < 0 || binning.axis >= spec.dim))
    throw ArgumentError("binning axis out of range");
  if (binning.bins < 2) throw ArgumentError("need at least 2 bins");

  const bool periodic = spec.boundary == Boundary::periodic;
  const double h = spec.spacing;
  auto domain_lo = [&](int a) { return spec.origin_offset[a] - 0.5 * h; };
  const double len = spec.extent();
  double lo = binning.lo, hi = binning.hi;
  if (lo == hi) {
    const int a0 = binning.axes == 1 ? binning.axis : 0;
    lo = domain_lo(a0);
    hi = domain_lo(a0) + len;
  }

  EnsembleReport rep;
  rep.bins_per_axis = binning.bins;
  rep.bin_dim = binning.axes;

  auto folded = [&](const std::vector<double>& q, int a) {
    return periodic ? detail::fold_periodic(q[a], domain_lo(a), len) : q[a];
  };

  long excluded = 0;
  if (binning.axes == 1) {
    Histogram emp(lo, hi, binning.bins);
    std::vector<double> kept;
    kept.reserve(finals.size());
    for (std::size_t i = 0; i < finals.size(); ++i) {
      if (status[i] != TrajectoryStatus::completed) {
        ++excluded;
        continue;
      }
      const double x = folded(finals[i], binning.axis);
      emp.add(x);
      if (x >= lo && x < hi) kept.push_back(x);
    }
    if (kept.empty()) throw DegenerateDensityError("no usable samples in binning window");

    // theoretical bin masses from the marginal of |ψ_target|², split across
    // bins by cell/bin overlap
    const auto masses = detail::axis_masses(target, binning.axis);
    std::vector<double> theo(binning.bins, 0.0);
    std::vector<std::pair<int, double>> ov;
    for (int i = 0; i < spec.points_per_axis; ++i) {
      detail::cell_bin_overlaps(spec.coord(binning.axis, i), h, lo, hi, binning.bins, ov);
      for (const auto& [b, w] : ov) theo[b] += masses[i] * w;
    }
    double theo_total = 0.0;
    for (double t : theo) theo_total += t;
    if (!(theo_total > 0.0)) throw DegenerateDensityError("target density vanishes in window");

    const auto n_kept = static_cast<double>(kept.size());
    rep.sample_count = kept.size();
    rep.histogram_empirical.assign(emp.counts.begin(), emp.counts.end());
    rep.histogram_theoretical.resize(binning.bins);
    std::vector<double> theo_probs(binning.bins);
    for (int b = 0; b < binning.bins; ++b) {
      theo_probs[b] = theo[b] / theo_total;
      rep.histogram_theoretical[b] = n_kept * theo_probs[b];
      rep.bin_centers.push_back(emp.center(b));
    }

    const auto chi = chi_square_test(emp.counts, theo_probs);
    rep.metrics.chi_square = chi.statistic;
    rep.metrics.chi_square_dof = chi.dof;
    rep.metrics.chi_square_p = chi.p_value;
    std::vector<double> emp_probs(binning.bins);
    for (int b = 0; b < binning.bins; ++b)
      emp_probs[b] = static_cast<double>(emp.counts[b]) / n_kept;
    rep.metrics.total_variation = total_variation(emp_probs, theo_probs);
    // KS against the full-domain CDF conditioned on the window
    PiecewiseCdf cdf(domain_lo(binning.axis), domain_lo(binning.axis) + len, masses);
    const double f_lo = cdf(lo), f_hi = cdf(hi);
    if (!(f_hi > f_lo)) throw DegenerateDensityError("target density vanishes in window");
    rep.metrics.ks = ks_statistic(
        kept, [&](double x) { return (cdf(x) - f_lo) / (f_hi - f_lo); });
  } else {
    const int nb = binning.bins;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(nb) * nb, 0);
    std::int64_t kept = 0;
    for (std::size_t i = 0; i < finals.size(); ++i) {
      if (status[i] != TrajectoryStatus::completed) {
        ++excluded;
        continue;
      }
      const double x = folded(finals[i], 0), y = folded(finals[i], 1);
      if (x < lo || x >= hi || y < lo || y >= hi) continue;
      int bx = std::min(nb - 1, static_cast<int>((x - lo) / (hi - lo) * nb));
      int by = std::min(nb - 1, static_cast<int>((y - lo) / (hi - lo) * nb));
      ++counts[static_cast<std::size_t>(bx) * nb + by];
      ++kept;
    }
    if (kept == 0) throw DegenerateDensityError("no usable samples in binning window");

    std::vector<double> theo(static_cast<std::size_t>(nb) * nb, 0.0);
    const int npts = spec.points_per_axis;
    std::vector<std::pair<int, double>> ovx, ovy;
    for (int i = 0; i < npts; ++i) {
      detail::cell_bin_overlaps(spec.coord(0, i), h, lo, hi, nb, ovx);
      if (ovx.empty()) continue;
      for (int j = 0; j < npts; ++j) {
        detail::cell_bin_overlaps(spec.coord(1, j), h, lo, hi, nb, ovy);
        if (ovy.empty()) continue;
        const double mass =
            std::norm(target.amp[static_cast<std::size_t>(i) * npts + j]) * spec.cell_volume();
        for (const auto& [bx, wx] : ovx)
          for (const auto& [by, wy] : ovy)
            theo[static_cast<std::size_t>(bx) * nb + by] += mass * wx * wy;
      }
    }
    double theo_total = 0.0;
    for (double t : theo) theo_total += t;
    if (!(theo_total > 0.0)) throw DegenerateDensityError("target density vanishes in window");

    rep.sample_count = static_cast<std::size_t>(kept);
    rep.histogram_empirical.assign(counts.begin(), counts.end());
    std::vector<double> theo_probs(theo.size()), emp_probs(theo.size());
    rep.histogram_theoretical.resize(theo.size());
    for (std::size_t b = 0; b < theo.size(); ++b) {
      theo_probs[b] = theo[b] / theo_total;
      emp_probs[b] = static_cast<double>(counts[b]) / static_cast<double>(kept);
      rep.histogram_theoretical[b] = static_cast<double>(kept) * theo_probs[b];
    }
    const double bw = (hi - lo) / nb;
    for (int b = 0; b < nb; ++b) rep.bin_centers.push_back(lo + (b + 0.5) * bw);
    for (int b = 0; b < nb; ++b) rep.bin_centers.push_back(lo + (b + 0.5) * bw);

    const auto chi = chi_square_test(counts, theo_probs);
    rep.metrics.chi_square = chi.statistic;
    rep.metrics.chi_square_dof = chi.dof;
    rep.metrics.chi_square_p = chi.p_value;
    rep.metrics.total_variation = total_variation(emp_probs, theo_probs);
    rep.metrics.ks = -1.0;  // not defined for joint binning
  }

  rep.excluded_fraction =
      finals.empty() ? 0.0 : static_cast<double>(excluded) / static_cast<double>(finals.size());
  return rep;
}

// Everything run_equivariance_experiment needs besides the ensemble size and
// the seed-carrying stream. A null timeline means T = 0: configurations are
// sampled and binned without motion (the null experiment).
struct EquivarianceScenario {
  std::shared_ptr<WaveTimeline> timeline;
  GridWavefunction psi_initial;
  GridWavefunction psi_final;
  Constants constants;
  EnsembleOptions ensemble;
  BinningSpec binning;
};

// Samples Q(0) from |ψ₀|², transports the ensemble to the horizon, and
// compares Q(T) against |ψ_T|². Trajectory i draws from stream i of the given
// stream's master seed.
inline EnsembleReport run_equivariance_experiment(const EquivarianceScenario& scenario,
                                                  long ensemble_size, const RngStream& rng) {
  if (ensemble_size <= 0) throw ArgumentError("ensemble size must be positive");
  auto starts = sample_ensemble_starts(scenario.psi_initial, ensemble_size, rng.master_seed(),
                                       scenario.ensemble.workers);
  EnsembleResult res;
  if (scenario.timeline) {
    res = evolve_ensemble(*scenario.timeline, std::move(starts), scenario.ensemble,
                          scenario.constants);
  } else {
    res.positions = std::move(starts);
    res.status.assign(ensemble_size, TrajectoryStatus::completed);
    res.capped.assign(ensemble_size, 0);
  }
  if (res.excluded() > 0.01 * static_cast<double>(ensemble_size))
    throw ExperimentInvalidError("node/domain exits exceed 1% of the ensemble");
  return build_ensemble_report(res.positions, res.status, scenario.psi_final, scenario.binning);
}

}  // namespace pilotwave
