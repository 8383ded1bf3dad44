#pragma once
// Two-particle multi-time wave functions in 1+1 dimensions.  The state
// phi(t1, x1, t2, x2) carries one clock per particle slot; for the
// non-interacting model each slot evolves under its own free Dirac
// Hamiltonian and the two evolutions commute.  Values are only handed out
// on the spacelike domain: configurations whose two events are spacelike
// separated or identical.
//
// Storage layout: values[((i1*n + i2)*2 + a)*2 + b] with a the slot-1 and
// b the slot-2 spinor component, both slots sharing one periodic spatial
// grid of n points.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <utility>
#include <vector>

#include "pilotwave/dirac.hpp"
#include "pilotwave/errors.hpp"
#include "pilotwave/fft.hpp"
#include "pilotwave/grid.hpp"

namespace pilotwave {

inline bool spacelike_or_identical(double t1, double x1, double t2, double x2) {
  // identical events and equal-time pairs both satisfy the inequality
  return std::abs(t1 - t2) <= std::abs(x1 - x2) * (1.0 - 1e-9);
}

struct MultiTimeWF {
  long points = 0;
  double x0 = 0.0;
  double spacing = 1.0;
  double mass1 = 1.0;
  double mass2 = 1.0;
  double hbar = 1.0;
  double t1 = 0.0;  // slot clocks of the stored data
  double t2 = 0.0;
  cvec values;
  bool strict_domain = true;  // gate value requests to spacelike configurations

  void check_shape() const {
    if (points < 8) throw ShapeError("pair grid needs at least 8 points per axis");
    if (!(spacing > 0.0)) throw ArgumentError("grid spacing must be positive");
    if (!(mass1 >= 0.0) || !(mass2 >= 0.0)) throw ArgumentError("masses must be nonnegative");
    if (!(hbar > 0.0)) throw ArgumentError("hbar must be positive");
    if (values.size() != static_cast<std::size_t>(points) * points * 4)
      throw ShapeError("pair state length != 4 n^2");
  }

  long index(long i1, long i2, int a, int b) const {
    return ((i1 * points + i2) * 2 + a) * 2 + b;
  }

  std::array<cplx, 4> block(long i1, long i2) const {
    const long base = (i1 * points + i2) * 4;
    return {values[base], values[base + 1], values[base + 2], values[base + 3]};
  }

  double coord(long i) const { return x0 + spacing * static_cast<double>(i); }

  double norm2() const {
    double acc = 0.0;
    for (const auto& v : values) acc += std::norm(v);
    return acc * spacing * spacing;
  }

  void normalize() {
    const double n2 = norm2();
    if (!(n2 > 0.0)) throw DegenerateDensityError("cannot normalize a null pair state");
    const double s = 1.0 / std::sqrt(n2);
    for (auto& v : values) v *= s;
  }
};

// phi0 = a (x) b on the shared grid; clocks taken from the factors.
inline MultiTimeWF make_product_wf(const DiracField& a, const DiracField& b) {
  a.check_shape();
  b.check_shape();
  if (!a.spec.same_geometry(b.spec)) throw ShapeError("product factors must share one grid");
  if (a.hbar != b.hbar) throw ArgumentError("product factors must share hbar");
  MultiTimeWF w;
  w.points = a.spec.points_per_axis;
  w.x0 = a.spec.origin_offset.empty() ? 0.0 : a.spec.origin_offset[0];
  w.spacing = a.spec.spacing;
  w.mass1 = a.mass;
  w.mass2 = b.mass;
  w.hbar = a.hbar;
  w.t1 = a.time;
  w.t2 = b.time;
  w.values.resize(static_cast<std::size_t>(w.points) * w.points * 4);
  for (long i1 = 0; i1 < w.points; ++i1) {
    const cplx a0 = a.upper[i1], a1 = a.lower[i1];
    for (long i2 = 0; i2 < w.points; ++i2) {
      const long base = (i1 * w.points + i2) * 4;
      w.values[base + 0] = a0 * b.upper[i2];
      w.values[base + 1] = a0 * b.lower[i2];
      w.values[base + 2] = a1 * b.upper[i2];
      w.values[base + 3] = a1 * b.lower[i2];
    }
  }
  return w;
}

inline MultiTimeWF superpose_pair(cplx c1, const MultiTimeWF& a, cplx c2, const MultiTimeWF& b) {
  a.check_shape();
  b.check_shape();
  if (a.points != b.points || a.x0 != b.x0 || a.spacing != b.spacing)
    throw ShapeError("superposed pair states must share one grid");
  if (a.mass1 != b.mass1 || a.mass2 != b.mass2 || a.hbar != b.hbar)
    throw ArgumentError("superposed pair states must share masses and hbar");
  if (a.t1 != b.t1 || a.t2 != b.t2)
    throw ArgumentError("superposed pair states must share slot clocks");
  MultiTimeWF out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = c1 * a.values[i] + c2 * b.values[i];
  return out;
}

namespace detail {

// Advance one tensor slot by dt with the exact per-mode Dirac rotation.
// The step is exact for band-limited data, so dt is unrestricted here
// (unlike the stored single-particle timelines, nothing is interpolated).
inline void mt_advance_slot(MultiTimeWF& w, int slot, double dt) {
  if (dt == 0.0) return;
  const long n = w.points;
  const int ni = static_cast<int>(n);
  const double m = slot == 1 ? w.mass1 : w.mass2;
  cvec u(static_cast<std::size_t>(n)), l(static_cast<std::size_t>(n));
  std::vector<double> cs(static_cast<std::size_t>(n)), sn(static_cast<std::size_t>(n)),
      pk(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) {
    const double p = w.hbar * fft_wavenumber(static_cast<int>(k), ni, w.spacing);
    const double e = std::hypot(p, m);
    const double theta = e * dt / w.hbar;
    cs[k] = std::cos(theta);
    sn[k] = e > 0.0 ? std::sin(theta) / e : dt / w.hbar;
    pk[k] = p;
  }
  const long lines = 2 * n;  // (partner index, partner component)
  for (long line = 0; line < lines; ++line) {
    const long j = line / 2;
    const int c = static_cast<int>(line % 2);
    // slot 1: vary i1 at fixed (i2=j, b=c); slot 2: vary i2 at fixed (i1=j, a=c)
    const long base = slot == 1 ? j * 4 + c : j * n * 4 + c * 2;
    const long stride = slot == 1 ? n * 4 : 4;
    const long comp = slot == 1 ? 2 : 1;  // offset between the two spinor comps
    for (long i = 0; i < n; ++i) {
      u[i] = w.values[base + i * stride];
      l[i] = w.values[base + i * stride + comp];
    }
    fft_forward(u, 1, ni);
    fft_forward(l, 1, ni);
    for (long k = 0; k < n; ++k) {
      const cplx uu = u[k], ll = l[k];
      const cplx is(0.0, sn[k]);
      u[k] = cs[k] * uu - is * (m * uu + pk[k] * ll);
      l[k] = cs[k] * ll - is * (pk[k] * uu - m * ll);
    }
    fft_inverse(u, 1, ni);
    fft_inverse(l, 1, ni);
    for (long i = 0; i < n; ++i) {
      w.values[base + i * stride] = u[i];
      w.values[base + i * stride + comp] = l[i];
    }
  }
}

}  // namespace detail

inline void advance_slot(MultiTimeWF& w, int slot, double dt) {
  w.check_shape();
  if (slot != 1 && slot != 2) throw ArgumentError("slot must be 1 or 2");
  detail::mt_advance_slot(w, slot, dt);
  (slot == 1 ? w.t1 : w.t2) += dt;
}

struct IndexWindow {
  long lo = 0;
  long count = 0;
};

struct MultiTimeBlock {
  long i1_lo = 0, i2_lo = 0;
  long n1 = 0, n2 = 0;
  double t1 = 0.0, t2 = 0.0;
  cvec values;  // ((r1*n2 + r2)*2 + a)*2 + b

  std::array<cplx, 4> block(long r1, long r2) const {
    const long base = (r1 * n2 + r2) * 4;
    return {values[base], values[base + 1], values[base + 2], values[base + 3]};
  }
};

inline IndexWindow full_window(const MultiTimeWF& w) { return {0, w.points}; }

// Values of phi at slot times (t1, t2) on the window w1 x w2.  The request
// must lie inside the spacelike domain: for t1 != t2 every pair of window
// coordinates must be spacelike separated, so the windows must keep a gap
// of at least |t1 - t2|.  The slot unitaries themselves act on the whole
// stored grid; the domain gate applies to value requests.
inline MultiTimeBlock evaluate(const MultiTimeWF& phi, double t1, IndexWindow w1, double t2,
                               IndexWindow w2) {
  phi.check_shape();
  for (const auto& w : {w1, w2})
    if (w.lo < 0 || w.count < 1 || w.lo + w.count > phi.points)
      throw ArgumentError("evaluation window outside the grid");
  if (phi.strict_domain && t1 != t2) {
    const double a_lo = phi.coord(w1.lo), a_hi = phi.coord(w1.lo + w1.count - 1);
    const double b_lo = phi.coord(w2.lo), b_hi = phi.coord(w2.lo + w2.count - 1);
    double gap = 0.0;
    if (a_hi < b_lo) gap = b_lo - a_hi;
    if (b_hi < a_lo) gap = a_lo - b_hi;
    if (!(std::abs(t1 - t2) <= gap * (1.0 - 1e-9)))
      throw OutOfDomainError("requested configurations are not spacelike separated");
  }
  MultiTimeWF cur = phi;
  advance_slot(cur, 1, t1 - phi.t1);
  advance_slot(cur, 2, t2 - phi.t2);
  MultiTimeBlock out;
  out.i1_lo = w1.lo;
  out.i2_lo = w2.lo;
  out.n1 = w1.count;
  out.n2 = w2.count;
  out.t1 = t1;
  out.t2 = t2;
  out.values.resize(static_cast<std::size_t>(w1.count) * w2.count * 4);
  for (long r1 = 0; r1 < w1.count; ++r1)
    for (long r2 = 0; r2 < w2.count; ++r2) {
      const long src = ((w1.lo + r1) * phi.points + (w2.lo + r2)) * 4;
      const long dst = (r1 * w2.count + r2) * 4;
      for (int c = 0; c < 4; ++c) out.values[dst + c] = cur.values[src + c];
    }
  return out;
}

// --- restriction to a leaf ---------------------------------------------------

// psi_Sigma(x1, x2) = phi((t(x1), x1), (t(x2), x2)) for a leaf given by its
// time samples on the grid, plus the sample times (needed by consumers that
// contract currents with the leaf normal).
struct LeafField {
  long points = 0;
  double x0 = 0.0;
  double spacing = 1.0;
  double hbar = 1.0;
  std::vector<double> times;
  cvec values;  // same inner layout as MultiTimeWF

  std::array<cplx, 4> block(long i1, long i2) const {
    const long base = (i1 * points + i2) * 4;
    return {values[base], values[base + 1], values[base + 2], values[base + 3]};
  }
};

namespace detail {

// Per-point-time slot evolution: out(x_j) = (1/N) sum_k M(k, tau_j) w_hat(k)
// e^{2 pi i jk/N}.  Tables C(j,k) and S(j,k) fold the rotation coefficients
// with the reconstruction phases so each line costs O(N^2) complex fmas.
inline void mt_slot_to_times(MultiTimeWF& w, int slot, const std::vector<double>& tau) {
  const long n = w.points;
  const int ni = static_cast<int>(n);
  const double m = slot == 1 ? w.mass1 : w.mass2;
  bool all_zero = true;
  for (double t : tau)
    if (t != 0.0) all_zero = false;
  if (all_zero) return;

  std::vector<double> pk(static_cast<std::size_t>(n)), ek(static_cast<std::size_t>(n));
  for (long k = 0; k < n; ++k) {
    pk[k] = w.hbar * fft_wavenumber(static_cast<int>(k), ni, w.spacing);
    ek[k] = std::hypot(pk[k], m);
  }
  const double tau_scale = 1.0 / static_cast<double>(n);
  cvec ctab(static_cast<std::size_t>(n) * n), stab(static_cast<std::size_t>(n) * n);
  const double base_ang = 2.0 * 3.14159265358979323846 / static_cast<double>(n);
  for (long j = 0; j < n; ++j) {
    for (long k = 0; k < n; ++k) {
      const cplx ph = std::polar(tau_scale, base_ang * static_cast<double>((j * k) % n));
      const double theta = ek[k] * tau[j] / w.hbar;
      const double s = ek[k] > 0.0 ? std::sin(theta) / ek[k] : tau[j] / w.hbar;
      ctab[j * n + k] = std::cos(theta) * ph;
      stab[j * n + k] = cplx(0.0, -s) * ph;
    }
  }

  cvec u(static_cast<std::size_t>(n)), l(static_cast<std::size_t>(n)),
      hu(static_cast<std::size_t>(n)), hl(static_cast<std::size_t>(n)),
      ou(static_cast<std::size_t>(n)), ol(static_cast<std::size_t>(n));
  const long lines = 2 * n;
  for (long line = 0; line < lines; ++line) {
    const long j = line / 2;
    const int c = static_cast<int>(line % 2);
    const long base = slot == 1 ? j * 4 + c : j * n * 4 + c * 2;
    const long stride = slot == 1 ? n * 4 : 4;
    const long comp = slot == 1 ? 2 : 1;
    for (long i = 0; i < n; ++i) {
      u[i] = w.values[base + i * stride];
      l[i] = w.values[base + i * stride + comp];
    }
    fft_forward(u, 1, ni);
    fft_forward(l, 1, ni);
    for (long k = 0; k < n; ++k) {
      hu[k] = m * u[k] + pk[k] * l[k];
      hl[k] = pk[k] * u[k] - m * l[k];
    }
    for (long jo = 0; jo < n; ++jo) {
      cplx au(0.0), al(0.0);
      const cplx* ct = ctab.data() + jo * n;
      const cplx* st = stab.data() + jo * n;
      for (long k = 0; k < n; ++k) {
        au += ct[k] * u[k] + st[k] * hu[k];
        al += ct[k] * l[k] + st[k] * hl[k];
      }
      ou[jo] = au;
      ol[jo] = al;
    }
    for (long i = 0; i < n; ++i) {
      w.values[base + i * stride] = ou[i];
      w.values[base + i * stride + comp] = ol[i];
    }
  }
}

}  // namespace detail

inline LeafField restrict_to_leaf(const MultiTimeWF& phi, const std::vector<double>& leaf_times) {
  phi.check_shape();
  if (leaf_times.size() != static_cast<std::size_t>(phi.points))
    throw ShapeError("leaf time samples must match the grid");
  // spacelike leaf: |t(x+h) - t(x)| <= (1 - 0.05) h between neighbouring
  // samples.  The wrap pair is exempt: leaves are graphs over the real line
  // and the periodic grid only windows them.
  const double bound = 0.95 * phi.spacing;
  for (long i = 0; i + 1 < phi.points; ++i)
    if (!(std::abs(leaf_times[i + 1] - leaf_times[i]) <= bound))
      throw FoliationError("leaf exceeds the spacelike slope bound");
  MultiTimeWF work = phi;
  std::vector<double> tau(leaf_times.size());
  for (std::size_t j = 0; j < tau.size(); ++j) tau[j] = leaf_times[j] - phi.t2;
  detail::mt_slot_to_times(work, 2, tau);
  for (std::size_t j = 0; j < tau.size(); ++j) tau[j] = leaf_times[j] - phi.t1;
  detail::mt_slot_to_times(work, 1, tau);
  LeafField out;
  out.points = phi.points;
  out.x0 = phi.x0;
  out.spacing = phi.spacing;
  out.hbar = phi.hbar;
  out.times = leaf_times;
  out.values = std::move(work.values);
  return out;
}

// --- point evaluation --------------------------------------------------------

// Read-only mode-space view of a pair state for arbitrary-point queries;
// safe for concurrent use.
class MultiTimeEvaluator {
 public:
  explicit MultiTimeEvaluator(const MultiTimeWF& w) : w_(w) {
    w.check_shape();
    // two-axis DFT of all four components via the slot line machinery
    khat_ = w.values;
    const long n = w_.points;
    const int ni = static_cast<int>(n);
    cvec line(static_cast<std::size_t>(n));
    for (int slot = 1; slot <= 2; ++slot) {
      for (long j = 0; j < n; ++j)
        for (int c = 0; c < 2; ++c)
          for (int d = 0; d < 2; ++d) {
            const long base =
                slot == 1 ? j * 4 + c * 2 + d : j * n * 4 + c * 2 + d;
            const long stride = slot == 1 ? n * 4 : 4;
            for (long i = 0; i < n; ++i) line[i] = khat_[base + i * stride];
            fft_forward(line, 1, ni);
            for (long i = 0; i < n; ++i) khat_[base + i * stride] = line[i];
          }
    }
    pk_.resize(static_cast<std::size_t>(n));
    for (long k = 0; k < n; ++k)
      pk_[k] = w_.hbar * fft_wavenumber(static_cast<int>(k), ni, w_.spacing);
  }

  const MultiTimeWF& state() const { return w_; }

  // phi at one configuration ((t1,x1),(t2,x2)); spinor block indexed a*2+b.
  std::array<cplx, 4> point(double t1, double x1, double t2, double x2) const {
    if (w_.strict_domain && !spacelike_or_identical(t1, x1, t2, x2))
      throw OutOfDomainError("requested configuration is not spacelike separated");
    const long n = w_.points;
    const double inv_n = 1.0 / static_cast<double>(n);
    std::vector<std::array<cplx, 4>> m1(static_cast<std::size_t>(n)),
        m2(static_cast<std::size_t>(n));
    for (long k = 0; k < n; ++k) {
      m1[k] = mode_matrix(pk_[k], w_.mass1, t1 - w_.t1, x1, k, inv_n);
      m2[k] = mode_matrix(pk_[k], w_.mass2, t2 - w_.t2, x2, k, inv_n);
    }
    std::array<cplx, 4> acc{};
    for (long k1 = 0; k1 < n; ++k1) {
      const auto& a = m1[k1];
      const cplx* row = khat_.data() + k1 * n * 4;
      std::array<cplx, 4> y{};  // sum over k2 of (I (x) M2) w
      for (long k2 = 0; k2 < n; ++k2) {
        const auto& b = m2[k2];
        const cplx* v = row + k2 * 4;
        y[0] += b[0] * v[0] + b[1] * v[1];
        y[1] += b[2] * v[0] + b[3] * v[1];
        y[2] += b[0] * v[2] + b[1] * v[3];
        y[3] += b[2] * v[2] + b[3] * v[3];
      }
      acc[0] += a[0] * y[0] + a[1] * y[2];
      acc[1] += a[0] * y[1] + a[1] * y[3];
      acc[2] += a[2] * y[0] + a[3] * y[2];
      acc[3] += a[2] * y[1] + a[3] * y[3];
    }
    return acc;
  }

 private:
  // exp(-i h(k) tau / hbar) times the reconstruction phase e^{ik(x-x0)}/n
  std::array<cplx, 4> mode_matrix(double p, double m, double tau, double x, long k,
                                  double inv_n) const {
    const double e = std::hypot(p, m);
    const double theta = e * tau / w_.hbar;
    const double s = e > 0.0 ? std::sin(theta) / e : tau / w_.hbar;
    const double kphys = p / w_.hbar;
    const cplx ph = std::polar(inv_n, kphys * (x - w_.x0));
    const cplx c = std::cos(theta) * ph;
    const cplx is = cplx(0.0, s) * ph;
    return {c - is * m, -is * p, -is * p, c + is * m};
  }

  MultiTimeWF w_;
  cvec khat_;
  std::vector<double> pk_;
};

// --- consistency checker -----------------------------------------------------

using PairApply = std::function<cvec(const cvec&)>;

// dt^2-scaled worst relative commutator residual: to leading order this is
// the norm of the difference between evolving dt in the two slot orders, so
// "0" certifies that a joint multi-time evolution exists for the pair.
inline double consistency_commutator(const PairApply& h1, const PairApply& h2,
                                     const std::vector<cvec>& sample_states, double dt_probe) {
  if (sample_states.empty()) throw ArgumentError("consistency probe needs sample states");
  if (!(dt_probe > 0.0)) throw ArgumentError("probe step must be positive");
  double worst = 0.0;
  for (const auto& chi : sample_states) {
    double n2 = 0.0;
    for (const auto& v : chi) n2 += std::norm(v);
    if (!(n2 > 0.0)) throw ArgumentError("consistency probe state has zero norm");
    const cvec a = h1(h2(chi));
    const cvec b = h2(h1(chi));
    if (a.size() != chi.size() || b.size() != chi.size())
      throw ShapeError("operator application changed the state length");
    double r2 = 0.0;
    for (std::size_t i = 0; i < chi.size(); ++i) r2 += std::norm(a[i] - b[i]);
    worst = std::max(worst, std::sqrt(r2 / n2));
  }
  return dt_probe * dt_probe * worst;
}

// h(k) on one tensor slot of a pair state laid out like MultiTimeWF::values.
inline PairApply make_free_slot_hamiltonian(const MultiTimeWF& geom, int slot) {
  geom.check_shape();
  if (slot != 1 && slot != 2) throw ArgumentError("slot must be 1 or 2");
  const long n = geom.points;
  const double m = slot == 1 ? geom.mass1 : geom.mass2;
  const double hbar = geom.hbar;
  const double h = geom.spacing;
  return [n, m, hbar, h, slot](const cvec& in) {
    if (in.size() != static_cast<std::size_t>(n) * n * 4)
      throw ShapeError("pair state length != 4 n^2");
    cvec out = in;
    const int ni = static_cast<int>(n);
    cvec u(static_cast<std::size_t>(n)), l(static_cast<std::size_t>(n));
    for (long line = 0; line < 2 * n; ++line) {
      const long j = line / 2;
      const int c = static_cast<int>(line % 2);
      const long base = slot == 1 ? j * 4 + c : j * n * 4 + c * 2;
      const long stride = slot == 1 ? n * 4 : 4;
      const long comp = slot == 1 ? 2 : 1;
      for (long i = 0; i < n; ++i) {
        u[i] = out[base + i * stride];
        l[i] = out[base + i * stride + comp];
      }
      fft_forward(u, 1, ni);
      fft_forward(l, 1, ni);
      for (long k = 0; k < n; ++k) {
        const double p = hbar * fft_wavenumber(static_cast<int>(k), ni, h);
        const cplx uu = u[k], ll = l[k];
        u[k] = m * uu + p * ll;
        l[k] = p * uu - m * ll;
      }
      fft_inverse(u, 1, ni);
      fft_inverse(l, 1, ni);
      for (long i = 0; i < n; ++i) {
        out[base + i * stride] = u[i];
        out[base + i * stride + comp] = l[i];
      }
    }
    return out;
  };
}

// Multiplication by a pair potential sampled on the (x1, x2) grid.
inline PairApply make_pair_potential(std::vector<double> v, long n) {
  if (v.size() != static_cast<std::size_t>(n) * n)
    throw ShapeError("potential table length != n^2");
  return [v = std::move(v), n](const cvec& in) {
    if (in.size() != static_cast<std::size_t>(n) * n * 4)
      throw ShapeError("pair state length != 4 n^2");
    cvec out(in.size());
    for (long cell = 0; cell < n * n; ++cell)
      for (int c = 0; c < 4; ++c) out[cell * 4 + c] = v[cell] * in[cell * 4 + c];
    return out;
  };
}

}  // namespace pilotwave
