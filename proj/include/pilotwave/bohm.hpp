#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "pilotwave/constants.hpp"
#include "pilotwave/grid.hpp"
#include "pilotwave/spline.hpp"

namespace pilotwave {

// Point of the variable-number configuration space: `sector` particles of a
// common dimension, coordinates flattened particle-major. Sector 0 is the
// empty configuration.
struct Configuration {
  int sector = 0;
  std::vector<double> positions;

  void validate(int particle_dim) const {
    if (sector < 0) throw ArgumentError("negative sector");
    if (particle_dim < 1) throw ArgumentError("particle dimension must be positive");
    if (positions.size() != static_cast<std::size_t>(sector) * particle_dim)
      throw ArgumentError("position count does not match sector");
    for (double x : positions)
      if (!std::isfinite(x)) throw ArgumentError("non-finite coordinate");
  }
  bool operator==(const Configuration&) const = default;
};

enum class JumpKind { emission, absorption };

struct JumpEvent {
  double time = 0.0;
  JumpKind kind = JumpKind::emission;
  Configuration from, to;
};

enum class TrajectoryStatus { completed, hit_node_region, left_domain };

struct TrajectoryRecord {
  std::vector<std::pair<double, Configuration>> samples;
  std::vector<JumpEvent> jumps;
  TrajectoryStatus status = TrajectoryStatus::completed;
  long capped_steps = 0;  // stages where the velocity cap bound
};

// One time slice of the guiding wave, evaluable off-grid. Grid-backed frames
// carry splines; analytic frames wrap closed forms (used by oracles and by
// eigenmode timelines where the time dependence is a known phase).
class WaveFrame {
 public:
  virtual ~WaveFrame() = default;
  virtual int dim() const = 0;
  // value and all dim gradient components at q
  virtual void eval(const double* q, cplx* value, cplx* grad) const = 0;
  virtual double mean_density() const = 0;  // node-guard scale
};

class SplineFrame : public WaveFrame {
 public:
  explicit SplineFrame(const GridWavefunction& psi) : dim_(psi.spec.dim) {
    psi.check_shape();
    const bool per = psi.spec.boundary == Boundary::periodic;
    mean_density_ = psi.squared_norm() /
                    (psi.spec.cell_volume() * static_cast<double>(psi.spec.total_points()));
    if (dim_ == 1) {
      s1_.emplace(psi.amp, psi.spec.origin_offset[0], psi.spec.spacing, per);
    } else if (dim_ == 2) {
      s2_.emplace(psi.amp, psi.spec.points_per_axis,
                  std::array<double, 2>{psi.spec.origin_offset[0], psi.spec.origin_offset[1]},
                  psi.spec.spacing, per);
    } else {
      throw ArgumentError("spline frames support dim <= 2");
    }
  }

  int dim() const override { return dim_; }
  double mean_density() const override { return mean_density_; }

  void eval(const double* q, cplx* value, cplx* grad) const override {
    if (dim_ == 1)
      s1_->eval(q[0], value, grad);
    else
      s2_->eval(q[0], q[1], value, grad, grad + 1);
  }

 private:
  int dim_;
  double mean_density_ = 0.0;
  std::optional<Spline1D> s1_;
  std::optional<Spline2D> s2_;
};

class AnalyticFrame : public WaveFrame {
 public:
  using EvalFn = std::function<void(const double*, cplx*, cplx*)>;
  AnalyticFrame(int dim, EvalFn fn, double mean_density)
      : dim_(dim), fn_(std::move(fn)), mean_density_(mean_density) {}
  int dim() const override { return dim_; }
  double mean_density() const override { return mean_density_; }
  void eval(const double* q, cplx* value, cplx* grad) const override { fn_(q, value, grad); }

 private:
  int dim_;
  EvalFn fn_;
  double mean_density_;
};

// Uniformly spaced wave snapshots covering [t0, t0 + (frame_count-1)*frame_dt].
// Frames returned by frame(k) stay valid only while k is one of the newest
// two indices requested — integrators sweep strictly forward.
class WaveTimeline {
 public:
  virtual ~WaveTimeline() = default;
  virtual double t0() const = 0;
  virtual double frame_dt() const = 0;
  virtual int frame_count() const = 0;
  virtual const WaveFrame& frame(int k) = 0;
  double horizon() const { return t0() + (frame_count() - 1) * frame_dt(); }
};

// Timeline over prebuilt snapshots; spline frames cached for the two active
// indices.
class StoredTimeline : public WaveTimeline {
 public:
  StoredTimeline(std::vector<GridWavefunction> snaps, double t0, double dt)
      : snaps_(std::move(snaps)), t0_(t0), dt_(dt) {
    if (snaps_.size() < 2) throw ArgumentError("timeline needs >= 2 snapshots");
    if (!(dt > 0.0)) throw ArgumentError("snapshot interval must be positive");
  }
  double t0() const override { return t0_; }
  double frame_dt() const override { return dt_; }
  int frame_count() const override { return static_cast<int>(snaps_.size()); }
  const WaveFrame& frame(int k) override {
    if (k < 0 || k >= frame_count()) throw Error("timeline frame out of range");
    for (auto& [idx, f] : cache_)
      if (idx == k) return *f;
    auto f = std::make_shared<SplineFrame>(snaps_[k]);
    cache_[slot_] = {k, f};
    slot_ ^= 1;
    return *f;
  }
  const GridWavefunction& snapshot(int k) const { return snaps_.at(k); }
  const GridWavefunction& final_snapshot() const { return snaps_.back(); }

 private:
  std::vector<GridWavefunction> snaps_;
  double t0_, dt_;
  std::pair<int, std::shared_ptr<SplineFrame>> cache_[2]{{-1, nullptr}, {-1, nullptr}};
  int slot_ = 0;
};

// Timeline of closed-form states, exact at every requested slice.
class AnalyticTimeline : public WaveTimeline {
 public:
  using FrameFactory = std::function<std::shared_ptr<WaveFrame>(double t)>;
  AnalyticTimeline(FrameFactory make, double t0, double dt, int count)
      : make_(std::move(make)), t0_(t0), dt_(dt), count_(count) {
    if (count_ < 2) throw ArgumentError("timeline needs >= 2 snapshots");
    if (!(dt > 0.0)) throw ArgumentError("snapshot interval must be positive");
  }
  double t0() const override { return t0_; }
  double frame_dt() const override { return dt_; }
  int frame_count() const override { return count_; }
  const WaveFrame& frame(int k) override {
    if (k < 0 || k >= count_) throw Error("timeline frame out of range");
    for (auto& [idx, f] : cache_)
      if (idx == k) return *f;
    auto f = make_(t0_ + k * dt_);
    cache_[slot_] = {k, f};
    slot_ ^= 1;
    return *f;
  }

 private:
  FrameFactory make_;
  double t0_, dt_;
  int count_;
  std::pair<int, std::shared_ptr<WaveFrame>> cache_[2]{{-1, nullptr}, {-1, nullptr}};
  int slot_ = 0;
};

struct MotionOptions {
  double node_epsilon = 1e-12;  // relative to mean cell density
  double v_max = 1e12;          // speed cap, euclidean over all components
  int record_every = 1;         // micro-steps between recorded samples
  int sector = 1;               // particles represented by the coordinates
  bool sort_identical = false;  // canonicalize particle order (symmetric ψ, 1D)
};

namespace detail {

// Velocity against (1-w)·frame_a + w·frame_b at a configuration point;
// returns false below the node guard. With sort_identical the evaluation
// point is coordinate-sorted and the velocity mapped back, which turns
// particle relabeling into an exact (bitwise) symmetry for symmetric ψ.
struct VelocityEvaluator {
  const WaveFrame* a = nullptr;
  const WaveFrame* b = nullptr;
  const Constants* constants = nullptr;
  MotionOptions opts;
  int dim = 0;
  int coords_per_particle = 1;
  mutable long cap_hits = 0;

  bool velocity(const double* q_raw, double w, double* v) const {
    thread_local std::vector<double> qs;
    thread_local std::vector<int> order;
    const double* q = q_raw;
    const bool sorting = opts.sort_identical && dim > 1;
    if (sorting) {
      qs.assign(q_raw, q_raw + dim);
      order.resize(dim);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int i, int j) { return qs[i] < qs[j]; });
      for (int i = 0; i < dim; ++i) qs[i] = q_raw[order[i]];
      q = qs.data();
    }
    thread_local cvec ga, gb;
    ga.resize(dim);
    cplx val;
    if (b && w != 0.0) {
      gb.resize(dim);
      cplx va, vb;
      a->eval(q, &va, ga.data());
      b->eval(q, &vb, gb.data());
      val = (1.0 - w) * va + w * vb;
      for (int i = 0; i < dim; ++i) ga[i] = (1.0 - w) * ga[i] + w * gb[i];
    } else {
      a->eval(q, &val, ga.data());
    }
    const double dens = std::norm(val);
    if (!(dens > opts.node_epsilon * a->mean_density())) return false;
    double speed2 = 0.0;
    for (int i = 0; i < dim; ++i) {
      const double vi = constants->hbar / constants->mass(i / coords_per_particle) *
                        std::imag(std::conj(val) * ga[i]) / dens;
      v[i] = vi;
      speed2 += vi * vi;
    }
    if (speed2 > opts.v_max * opts.v_max) {
      const double s = opts.v_max / std::sqrt(speed2);
      for (int i = 0; i < dim; ++i) v[i] *= s;
      ++cap_hits;
    }
    if (sorting) {
      thread_local std::vector<double> vu;
      vu.assign(dim, 0.0);
      for (int i = 0; i < dim; ++i) vu[order[i]] = v[i];
      std::copy(vu.begin(), vu.end(), v);
    }
    return true;
  }
};

enum class IntervalOutcome { ok, node, left };

// RK4 micro-steps across one frame interval, wave blended linearly in time.
// obs(t_before, t_after, q_after) fires after each accepted step.
template <typename Obs>
IntervalOutcome advance_interval(const VelocityEvaluator& ev, double* q, int dim,
                                 double t_base, double dt, int substeps, Obs&& obs) {
  thread_local std::vector<double> k1, k2, k3, k4, stage;
  k1.resize(dim);
  k2.resize(dim);
  k3.resize(dim);
  k4.resize(dim);
  stage.resize(dim);
  for (int j = 0; j < substeps; ++j) {
    const double w0 = static_cast<double>(j) / substeps;
    const double wh = (j + 0.5) / substeps;
    const double w1 = static_cast<double>(j + 1) / substeps;
    const double t = t_base + j * dt;
    bool ok;
    try {
      ok = ev.velocity(q, w0, k1.data());
      if (ok) {
        for (int i = 0; i < dim; ++i) stage[i] = q[i] + 0.5 * dt * k1[i];
        ok = ev.velocity(stage.data(), wh, k2.data());
      }
      if (ok) {
        for (int i = 0; i < dim; ++i) stage[i] = q[i] + 0.5 * dt * k2[i];
        ok = ev.velocity(stage.data(), wh, k3.data());
      }
      if (ok) {
        for (int i = 0; i < dim; ++i) stage[i] = q[i] + dt * k3[i];
        ok = ev.velocity(stage.data(), w1, k4.data());
      }
    } catch (const OutOfDomainError&) {
      return IntervalOutcome::left;
    }
    if (!ok) return IntervalOutcome::node;
    for (int i = 0; i < dim; ++i)
      q[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    obs(t, t + dt, q);
  }
  return IntervalOutcome::ok;
}

inline int substeps_for(double frame_dt, double dt) {
  if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
  const double ratio = frame_dt / dt;
  const int n = static_cast<int>(std::lround(ratio));
  if (n < 1 || std::abs(ratio - n) > 1e-9 * n)
    throw ArgumentError("dt must divide the snapshot interval");
  return n;
}

}  // namespace detail

// dQ/dt = (ħ/m_j) Im[ψ*∇_jψ]/|ψ|² against a single frame.
inline std::vector<double> bohm_velocity(const WaveFrame& frame, const Configuration& q,
                                         const Constants& constants,
                                         double node_epsilon = 1e-12) {
  const int dim = frame.dim();
  if (q.sector < 1 || dim % q.sector != 0)
    throw ArgumentError("sector does not divide wave dimension");
  q.validate(dim / q.sector);
  detail::VelocityEvaluator ev;
  ev.a = &frame;
  ev.constants = &constants;
  ev.opts.node_epsilon = node_epsilon;
  ev.dim = dim;
  ev.coords_per_particle = dim / q.sector;
  std::vector<double> v(q.positions.size());
  if (!ev.velocity(q.positions.data(), 0.0, v.data()))
    throw NodeProximityError("density below node threshold");
  return v;
}

inline std::vector<double> bohm_velocity(const GridWavefunction& psi, const Configuration& q,
                                         const Constants& constants,
                                         double node_epsilon = 1e-12) {
  SplineFrame frame(psi);
  return bohm_velocity(frame, q, constants, node_epsilon);
}

// RK4 on the guidance field with the wave linearly interpolated between
// consecutive snapshots; dt must divide the snapshot interval. Positions are
// recorded raw (not folded into a periodic fundamental domain).
inline TrajectoryRecord integrate_trajectory(WaveTimeline& timeline, const Configuration& q0,
                                             double dt, const Constants& constants,
                                             const MotionOptions& opts = {}) {
  const int substeps = detail::substeps_for(timeline.frame_dt(), dt);
  const int dim = static_cast<int>(q0.positions.size());
  if (opts.sector != q0.sector || q0.sector < 1 || dim % q0.sector != 0)
    throw ArgumentError("sector mismatch between q0 and options");
  q0.validate(dim / q0.sector);

  TrajectoryRecord rec;
  std::vector<double> q = q0.positions;
  rec.samples.push_back({timeline.t0(), q0});

  detail::VelocityEvaluator ev;
  ev.constants = &constants;
  ev.opts = opts;
  ev.dim = dim;
  ev.coords_per_particle = dim / opts.sector;

  long step = 0;
  const long last_step = static_cast<long>(timeline.frame_count() - 1) * substeps;
  for (int k = 0; k + 1 < timeline.frame_count(); ++k) {
    ev.a = &timeline.frame(k);
    ev.b = &timeline.frame(k + 1);
    const auto outcome = detail::advance_interval(
        ev, q.data(), dim, timeline.t0() + k * timeline.frame_dt(), dt, substeps,
        [&](double, double t1, const double* qq) {
          ++step;
          if (step % opts.record_every == 0 || step == last_step)
            rec.samples.push_back(
                {t1, Configuration{opts.sector, std::vector<double>(qq, qq + dim)}});
        });
    if (outcome != detail::IntervalOutcome::ok) {
      rec.status = outcome == detail::IntervalOutcome::node ? TrajectoryStatus::hit_node_region
                                                            : TrajectoryStatus::left_domain;
      break;
    }
  }
  rec.capped_steps = ev.cap_hits;
  return rec;
}

}  // namespace pilotwave
