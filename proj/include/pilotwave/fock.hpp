#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "pilotwave/bohm.hpp"
#include "pilotwave/constants.hpp"
#include "pilotwave/fft.hpp"
#include "pilotwave/grid.hpp"
#include "pilotwave/rng.hpp"
#include "pilotwave/sampling.hpp"

namespace pilotwave {

// Source-smearing profile replacing the point source: unit integral, exactly
// zero outside 4*radius. gaussian_bump uses sigma = radius/2 (hard-zeroed at
// 8 sigma, where the tail is ~1e-14 of the peak); compact_smooth_bump is the
// classic C^inf bump supported on |y| < radius.
enum class CutoffShape { gaussian_bump, compact_smooth_bump };

struct CutoffProfile {
  CutoffShape shape = CutoffShape::gaussian_bump;
  double radius = 0.5;
};

// Per-cell profile values on the 1-particle grid, normalized so the grid
// quadrature of the profile is exactly 1.
inline std::vector<double> cutoff_values(const CutoffProfile& profile, const GridSpec& spec) {
  if (spec.dim != 1) throw ArgumentError("cutoff profile lives on the 1-particle grid");
  if (!(profile.radius > 0.0) || !std::isfinite(profile.radius))
    throw ArgumentError("cutoff radius must be positive");
  const double cut = 4.0 * profile.radius;
  std::vector<double> phi(spec.total_points(), 0.0);
  double mass = 0.0;
  for (int i = 0; i < spec.points_per_axis; ++i) {
    const double y = spec.coord(0, i);
    double v = 0.0;
    if (std::abs(y) < cut) {
      if (profile.shape == CutoffShape::gaussian_bump) {
        const double s = 0.5 * profile.radius;
        v = std::exp(-0.5 * y * y / (s * s));
      } else {
        const double x = y / profile.radius;
        if (std::abs(x) < 1.0) v = std::exp(-1.0 / (1.0 - x * x));
      }
    }
    phi[i] = v;
    mass += v;
  }
  mass *= spec.spacing;
  if (!(mass > 0.0)) throw DegenerateDensityError("cutoff profile vanishes on this grid");
  for (double& v : phi) v /= mass;
  return phi;
}

// State of a variable number of identical 1D bosons coupled to a fixed source
// at the origin: amplitude c0 of the empty sector plus one grid function per
// occupied sector. Sector n lives on the n-fold tensor grid of the common
// 1-particle axis; truncation() is the highest sector kept.
struct FockState {
  cplx c0{0.0, 0.0};
  std::vector<GridWavefunction> sectors;  // sectors[k] holds sector k+1
  double time = 0.0;

  int truncation() const { return static_cast<int>(sectors.size()); }

  const GridSpec& axis() const {
    if (sectors.empty()) throw ShapeError("state has no grid sectors");
    return sectors.front().spec;
  }

  double sector_norm2(int n) const {
    if (n == 0) return std::norm(c0);
    if (n < 1 || n > truncation()) throw ArgumentError("sector index out of range");
    return sectors[static_cast<std::size_t>(n) - 1].squared_norm();
  }

  double total_norm2() const {
    double s = std::norm(c0);
    for (const auto& w : sectors) s += w.squared_norm();
    return s;
  }

  void normalize() {
    const double n2 = total_norm2();
    if (!(n2 > 0.0)) throw DegenerateDensityError("cannot normalize a zero state");
    const double s = 1.0 / std::sqrt(n2);
    c0 *= s;
    for (auto& w : sectors)
      for (cplx& a : w.amp) a *= s;
  }

  // Worst exchange asymmetry max|psi(y1,y2) - psi(y2,y1)| over the 2-particle
  // sector, relative to the largest amplitude there. Zero for states without
  // a 2-particle sector.
  double symmetry_residual() const {
    if (truncation() < 2) return 0.0;
    const GridWavefunction& w = sectors[1];
    const int n = w.spec.points_per_axis;
    double worst = 0.0, scale = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const cplx a = w.amp[static_cast<std::size_t>(i) * n + j];
        const cplx b = w.amp[static_cast<std::size_t>(j) * n + i];
        worst = std::max(worst, std::abs(a - b));
        scale = std::max(scale, std::abs(a));
      }
    return scale > 0.0 ? worst / scale : 0.0;
  }

  void validate(bool require_unit_norm = false) const {
    const GridSpec* ax = nullptr;
    for (int k = 0; k < truncation(); ++k) {
      const GridWavefunction& w = sectors[static_cast<std::size_t>(k)];
      w.check_shape();
      if (w.spec.dim != k + 1) throw ShapeError("sector dimension must equal particle count");
      if (!ax) ax = &w.spec;
      if (w.spec.points_per_axis != ax->points_per_axis || w.spec.spacing != ax->spacing ||
          w.spec.boundary != ax->boundary)
        throw ShapeError("sector grids must share the 1-particle axis");
      for (int a = 0; a < w.spec.dim; ++a)
        if (w.spec.origin_offset[a] != ax->origin_offset[0])
          throw ShapeError("sector grids must share the 1-particle axis");
    }
    if (symmetry_residual() > 1e-8) throw ShapeError("sector not symmetric under exchange");
    if (require_unit_norm && std::abs(total_norm2() - 1.0) > 1e-8)
      throw ArgumentError("state not normalized");
  }
};

inline FockState make_vacuum(const GridSpec& axis, int truncation) {
  if (axis.dim != 1) throw ArgumentError("the 1-particle axis must be one-dimensional");
  if (truncation < 1 || truncation > 2)
    throw ArgumentError("desk-scale sectors support truncation 1 or 2");
  FockState st;
  st.c0 = cplx(1.0, 0.0);
  st.sectors.push_back(make_wavefunction(axis, cvec(axis.total_points(), cplx(0.0))));
  if (truncation == 2) {
    GridSpec s2 = GridSpec::make(2, axis.points_per_axis, axis.spacing,
                                 {axis.origin_offset[0], axis.origin_offset[0]}, axis.boundary);
    st.sectors.push_back(make_wavefunction(s2, cvec(s2.total_points(), cplx(0.0))));
  }
  return st;
}

namespace detail {

inline void fock_axpy(FockState& y, cplx alpha, const FockState& x) {
  y.c0 += alpha * x.c0;
  for (std::size_t k = 0; k < y.sectors.size(); ++k) {
    cvec& ya = y.sectors[k].amp;
    const cvec& xa = x.sectors[k].amp;
    for (std::size_t i = 0; i < ya.size(); ++i) ya[i] += alpha * xa[i];
  }
}

inline void fock_scale(FockState& y, cplx alpha) {
  y.c0 *= alpha;
  for (auto& w : y.sectors)
    for (cplx& a : w.amp) a *= alpha;
}

// -hbar^2/2m * sum_j d^2/dy_j^2, spectral (periodic grids only)
inline cvec sector_kinetic(const GridWavefunction& w, const Constants& constants) {
  const GridSpec& g = w.spec;
  if (g.boundary != Boundary::periodic)
    throw ArgumentError("sector kinetic term requires periodic grids");
  const int n = g.points_per_axis;
  cvec out = w.amp;
  fft_forward(out, g.dim, n);
  std::vector<double> k2(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double k = fft_wavenumber(i, n, g.spacing);
    k2[static_cast<std::size_t>(i)] = k * k;
  }
  const double c = 0.5 * constants.hbar * constants.hbar / constants.mass(0);
  if (g.dim == 1) {
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] *= c * k2[static_cast<std::size_t>(i)];
  } else if (g.dim == 2) {
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j, ++idx)
        out[idx] *= c * (k2[static_cast<std::size_t>(i)] + k2[static_cast<std::size_t>(j)]);
  } else {
    throw ArgumentError("sector kinetic term implemented for <= 2 particles");
  }
  fft_inverse(out, g.dim, n);
  return out;
}

// exp(-i hbar k^2 dt / 2m) phase per sector, in place
inline void sector_kinetic_phase(GridWavefunction& w, double dt, const Constants& constants) {
  const GridSpec& g = w.spec;
  if (g.boundary != Boundary::periodic)
    throw ArgumentError("sector kinetic term requires periodic grids");
  const int n = g.points_per_axis;
  fft_forward(w.amp, g.dim, n);
  const double c = 0.5 * constants.hbar * dt / constants.mass(0);
  cvec phase(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double k = fft_wavenumber(i, n, g.spacing);
    phase[static_cast<std::size_t>(i)] = std::polar(1.0, -c * k * k);
  }
  if (g.dim == 1) {
    for (int i = 0; i < n; ++i) w.amp[static_cast<std::size_t>(i)] *= phase[static_cast<std::size_t>(i)];
  } else if (g.dim == 2) {
    std::size_t idx = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j, ++idx)
        w.amp[idx] *= phase[static_cast<std::size_t>(i)] * phase[static_cast<std::size_t>(j)];
  } else {
    throw ArgumentError("sector kinetic term implemented for <= 2 particles");
  }
  fft_inverse(w.amp, g.dim, n);
}

// The phi-coupling terms alone: annihilation g sqrt(n+1) Int phi* psi^(n+1)
// and creation (g/sqrt(n)) Sum_j phi(y_j) psi^(n-1). Creation out of the top
// sector is dropped (the truncation).
inline FockState apply_interaction(const FockState& state, const std::vector<double>& phi,
                                   const Constants& constants) {
  const double g = constants.coupling;
  const GridSpec& ax = state.axis();
  const int n = ax.points_per_axis;
  const double h = ax.spacing;
  if (phi.size() != static_cast<std::size_t>(n)) throw ShapeError("profile grid mismatch");

  FockState out = state;
  out.c0 = cplx(0.0);
  for (auto& w : out.sectors) w.amp.assign(w.amp.size(), cplx(0.0));

  const cvec& p1 = state.sectors[0].amp;
  // annihilation into sector 0: g * sqrt(1) * Int phi psi^(1)
  cplx acc(0.0);
  for (int i = 0; i < n; ++i) acc += phi[static_cast<std::size_t>(i)] * p1[static_cast<std::size_t>(i)];
  out.c0 = g * acc * h;
  // creation into sector 1: g * phi(y) * c0
  cvec& o1 = out.sectors[0].amp;
  for (int i = 0; i < n; ++i) o1[static_cast<std::size_t>(i)] = g * phi[static_cast<std::size_t>(i)] * state.c0;

  if (state.truncation() >= 2) {
    const cvec& p2 = state.sectors[1].amp;
    cvec& o2 = out.sectors[1].amp;
    const double ca = g * std::sqrt(2.0) * h;   // annihilation 2 -> 1
    const double cc = g / std::sqrt(2.0);       // creation 1 -> 2
    for (int i = 0; i < n; ++i) {
      cplx row(0.0);
      const std::size_t base = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) row += phi[static_cast<std::size_t>(j)] * p2[base + j];
      o1[static_cast<std::size_t>(i)] += ca * row;
    }
    for (int i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j)
        o2[base + j] = cc * (phi[static_cast<std::size_t>(i)] * p1[static_cast<std::size_t>(j)] +
                             phi[static_cast<std::size_t>(j)] * p1[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

inline double profile_norm(const std::vector<double>& phi, double h) {
  double s = 0.0;
  for (double v : phi) s += v * v;
  return std::sqrt(s * h);
}

}  // namespace detail

struct CutoffApplyResult {
  FockState h_psi;
  // upper bound g*sqrt(N_max+1)*|phi|*|psi_top| on the norm of the creation
  // term dropped at the truncation boundary
  double truncation_loss = 0.0;
};

// H psi for the smeared-source Hamiltonian: per-sector kinetic Laplacian,
// annihilation integral against phi*, creation by insertion of phi.
inline CutoffApplyResult apply_cutoff_hamiltonian(const FockState& state,
                                                  const CutoffProfile& profile,
                                                  const Constants& constants) {
  if (state.truncation() < 1) throw ArgumentError("need at least one grid sector");
  if (state.truncation() > 2)
    throw ArgumentError("desk-scale sectors support truncation 1 or 2");
  state.validate();
  constants.validate();
  const std::vector<double> phi = cutoff_values(profile, state.axis());

  CutoffApplyResult res;
  res.h_psi = detail::apply_interaction(state, phi, constants);
  for (int k = 0; k < state.truncation(); ++k) {
    const cvec kin = detail::sector_kinetic(state.sectors[static_cast<std::size_t>(k)], constants);
    cvec& o = res.h_psi.sectors[static_cast<std::size_t>(k)].amp;
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += kin[i];
  }
  const int top = state.truncation();
  res.truncation_loss = std::abs(constants.coupling) * std::sqrt(top + 1.0) *
                        detail::profile_norm(phi, state.axis().spacing) *
                        std::sqrt(state.sector_norm2(top));
  return res;
}

// One Strang step exp(-i K dt/2hbar) exp(-i H_I dt/hbar) exp(-i K dt/2hbar):
// kinetic phases are spectral and exact, the interaction exponential is a
// short Taylor series (H_I is bounded by g sqrt(N_max+1) |phi|, so a handful
// of terms reach machine precision; the step is split further if needed).
inline FockState evolve_fock(const FockState& state, const std::vector<double>& phi, double dt,
                             const Constants& constants) {
  if (!(dt > 0.0)) throw ArgumentError("dt must be positive");
  if (state.truncation() < 1) throw ArgumentError("need at least one grid sector");
  const double norm_before = state.total_norm2();

  FockState out = state;
  for (auto& w : out.sectors) detail::sector_kinetic_phase(w, 0.5 * dt, constants);

  const double bound = std::abs(constants.coupling) * std::sqrt(state.truncation() + 1.0) *
                       detail::profile_norm(phi, state.axis().spacing);
  const int pieces = std::max(1, static_cast<int>(std::ceil(bound * dt / constants.hbar / 0.5)));
  const cplx factor = cplx(0.0, -dt / (pieces * constants.hbar));
  for (int p = 0; p < pieces; ++p) {
    FockState term = out;
    for (int k = 1; k <= 40; ++k) {
      FockState ht = detail::apply_interaction(term, phi, constants);
      detail::fock_scale(ht, factor / static_cast<double>(k));
      term = std::move(ht);
      detail::fock_axpy(out, cplx(1.0), term);
      if (term.total_norm2() < 1e-32 * norm_before) break;
    }
  }

  for (auto& w : out.sectors) detail::sector_kinetic_phase(w, 0.5 * dt, constants);
  out.time = state.time + dt;
  for (auto& w : out.sectors) w.check_finite();
  if (std::abs(out.total_norm2() / norm_before - 1.0) > 1e-8)
    throw BlowupError("sector propagator norm drift above guard");
  return out;
}

// Snapshot of a FockState prepared for trajectory work: per-sector spline
// frames for guidance plus the empty-sector amplitude and sector weights for
// the jump rates.
struct FockFrame {
  cplx c0{0.0, 0.0};
  std::array<std::shared_ptr<const SplineFrame>, 2> sector{};  // [0] -> n=1, [1] -> n=2
  std::array<double, 3> norm2{0.0, 0.0, 0.0};
  int truncation = 0;
  double time = 0.0;
};

inline FockFrame make_fock_frame(const FockState& state) {
  FockFrame f;
  f.c0 = state.c0;
  f.truncation = state.truncation();
  f.time = state.time;
  f.norm2[0] = std::norm(state.c0);
  for (int k = 0; k < std::min(2, state.truncation()); ++k) {
    f.sector[static_cast<std::size_t>(k)] =
        std::make_shared<SplineFrame>(state.sectors[static_cast<std::size_t>(k)]);
    f.norm2[static_cast<std::size_t>(k) + 1] = state.sector_norm2(k + 1);
  }
  return f;
}

// Uniformly spaced FockState snapshots; frames stay valid only while their
// index is one of the two newest requested (integrators sweep forward).
class FockTimeline {
 public:
  virtual ~FockTimeline() = default;
  virtual double t0() const = 0;
  virtual double frame_dt() const = 0;
  virtual int frame_count() const = 0;
  virtual const FockFrame& frame(int k) = 0;
  virtual const FockState& initial_state() const = 0;
  virtual const GridSpec& axis() const = 0;
  virtual const std::vector<double>& phi() const = 0;
  double horizon() const { return t0() + (frame_count() - 1) * frame_dt(); }
};

class StoredFockTimeline : public FockTimeline {
 public:
  StoredFockTimeline(std::vector<FockState> snaps, const CutoffProfile& profile, double t0,
                     double dt)
      : snaps_(std::move(snaps)), t0_(t0), dt_(dt) {
    if (snaps_.size() < 2) throw ArgumentError("timeline needs >= 2 snapshots");
    if (!(dt > 0.0)) throw ArgumentError("snapshot interval must be positive");
    for (const auto& s : snaps_) s.validate();
    phi_ = cutoff_values(profile, snaps_.front().axis());
  }

  double t0() const override { return t0_; }
  double frame_dt() const override { return dt_; }
  int frame_count() const override { return static_cast<int>(snaps_.size()); }
  const FockState& initial_state() const override { return snaps_.front(); }
  const GridSpec& axis() const override { return snaps_.front().axis(); }
  const std::vector<double>& phi() const override { return phi_; }

  const FockFrame& frame(int k) override {
    if (k < 0 || k >= frame_count()) throw Error("timeline frame out of range");
    for (auto& [idx, f] : cache_)
      if (idx == k) return *f;
    auto f = std::make_shared<FockFrame>(make_fock_frame(snaps_[static_cast<std::size_t>(k)]));
    cache_[slot_] = {k, f};
    slot_ ^= 1;
    return *f;
  }

 private:
  std::vector<FockState> snaps_;
  double t0_, dt_;
  std::vector<double> phi_;
  std::pair<int, std::shared_ptr<FockFrame>> cache_[2]{{-1, nullptr}, {-1, nullptr}};
  int slot_ = 0;
};

// Streaming timeline driven by the Strang propagator; only the two newest
// frames are alive, so long 2-particle runs stay memory-bounded. The policy
// guard aborts once the top sector carries >= 1% of the total mass (the
// truncation then visibly distorts the dynamics).
class PropagatedFockTimeline : public FockTimeline {
 public:
  PropagatedFockTimeline(FockState psi0, const CutoffProfile& profile, const Constants& constants,
                         double frame_dt, int frame_count, int steps_per_frame = 1)
      : initial_(std::move(psi0)),
        constants_(constants),
        fdt_(frame_dt),
        count_(frame_count),
        steps_(steps_per_frame) {
    if (count_ < 2) throw ArgumentError("timeline needs >= 2 snapshots");
    if (!(fdt_ > 0.0)) throw ArgumentError("snapshot interval must be positive");
    if (steps_ < 1) throw ArgumentError("steps per frame must be >= 1");
    initial_.validate();
    phi_ = cutoff_values(profile, initial_.axis());
    check_truncation(initial_);
    state_ = initial_;
    cache_[0] = {0, std::make_shared<FockFrame>(make_fock_frame(state_))};
  }

  double t0() const override { return initial_.time; }
  double frame_dt() const override { return fdt_; }
  int frame_count() const override { return count_; }
  const FockState& initial_state() const override { return initial_; }
  const GridSpec& axis() const override { return initial_.axis(); }
  const std::vector<double>& phi() const override { return phi_; }
  const FockState& state() const { return state_; }

  const FockFrame& frame(int k) override {
    if (k < 0 || k >= count_) throw Error("timeline frame out of range");
    for (auto& [idx, f] : cache_)
      if (idx == k) return *f;
    if (k < next_)
      throw Error("streamed timeline cannot rewind to an evicted frame");
    while (next_ <= k) {
      const double dt = fdt_ / steps_;
      for (int s = 0; s < steps_; ++s) state_ = evolve_fock(state_, phi_, dt, constants_);
      check_truncation(state_);
      cache_[slot_] = {next_, std::make_shared<FockFrame>(make_fock_frame(state_))};
      slot_ ^= 1;
      ++next_;
    }
    for (auto& [idx, f] : cache_)
      if (idx == k) return *f;
    throw Error("frame cache invariant violated");
  }

 private:
  void check_truncation(const FockState& st) const {
    const double top = st.sector_norm2(st.truncation());
    if (top >= 0.01 * st.total_norm2())
      throw TruncationError("top sector holds >= 1% of the mass at t = " +
                            std::to_string(st.time));
  }

  FockState initial_, state_;
  Constants constants_;
  double fdt_;
  int count_, steps_;
  std::vector<double> phi_;
  int next_ = 1;  // first frame index not yet produced
  std::pair<int, std::shared_ptr<FockFrame>> cache_[2]{{-1, nullptr}, {-1, nullptr}};
  int slot_ = 0;
};

// Draws configurations from the sector-resolved |psi|^2: one uniform picks
// the sector by mass, then the in-sector cell/jitter draws follow the
// DensitySampler convention.
class FockSampler {
 public:
  explicit FockSampler(const FockState& state) {
    state.validate();
    const double total = state.total_norm2();
    if (!(total > 0.0)) throw DegenerateDensityError("zero-norm state");
    double acc = state.sector_norm2(0) / total;
    cum_.push_back(acc);
    for (int n = 1; n <= state.truncation(); ++n) {
      const double w = state.sector_norm2(n) / total;
      acc += w;
      cum_.push_back(acc);
      if (w > 0.0)
        samplers_.emplace_back(std::in_place, state.sectors[static_cast<std::size_t>(n) - 1]);
      else
        samplers_.emplace_back(std::nullopt);
    }
  }

  Configuration draw(RngStream& rng) const {
    const double u = rng.uniform();
    int n = 0;
    while (n < static_cast<int>(cum_.size()) - 1 && u >= cum_[static_cast<std::size_t>(n)]) ++n;
    // guard the top-of-cumulative rounding edge against empty sectors
    while (n > 0 && !samplers_[static_cast<std::size_t>(n) - 1]) --n;
    if (n == 0) return Configuration{0, {}};
    return Configuration{n, samplers_[static_cast<std::size_t>(n) - 1]->draw(rng)};
  }

 private:
  std::vector<double> cum_;
  std::vector<std::optional<DensitySampler>> samplers_;
};

}  // namespace pilotwave
