#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "pilotwave/ibc.hpp"
#include "pilotwave/renorm.hpp"

using namespace pilotwave;

namespace {

constexpr double kOuter = 8.0;

Constants coupled(double g) {
  Constants c;
  c.coupling = g;
  return c;
}

// roots of k sin(kR) = C cos(kR): the eigencondition of the boundary-coupled
// radial operator in a box of size R, one root per band [n pi/R, (n+1) pi/R]
double oracle_k(int n, double R, double C) {
  auto f = [&](double k) { return k * std::sin(k * R) - C * std::cos(k * R); };
  double lo = n * kPi / R + 1e-13, hi = (n + 1) * kPi / R - 1e-13;
  double flo = f(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((f(mid) > 0) == (flo > 0)) {
      lo = mid;
      flo = f(mid);
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

RadialIbcState state_from_modes(const EigenSystem& es, int points, double h, const Constants& c,
                                const std::vector<cplx>& amps) {
  cvec v(static_cast<std::size_t>(points), cplx(0.0));
  for (std::size_t m = 0; m < amps.size(); ++m)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += amps[m] * es.vectors[m][i];
  auto s = ibc_state_from_vector(v, points, h, c);
  s.normalize();
  return s;
}

// three low modes with fixed complex weights; the workhorse smooth state
RadialIbcState mixture_state(int points, const Constants& c) {
  const double h = kOuter / points;
  auto es = ibc_spectrum(points, h, c, 4);
  return state_from_modes(es, points, h, c,
                          {cplx(0.8), cplx(0.45) * std::polar(1.0, 1.1),
                           cplx(0.35) * std::polar(1.0, -0.6)});
}

cplx weighted_inner(const RadialIbcState& a, const RadialIbcState& b) {
  cplx s = std::conj(a.c0) * b.c0;
  for (std::size_t i = 0; i < a.u.size(); ++i)
    s += 4.0 * kPi * a.spacing * std::conj(a.u[i]) * b.u[i];
  return s;
}

}  // namespace

TEST_CASE("boundary fit reproduces quadratics exactly") {
  const double h = 0.03;
  cvec u(40);
  const cplx a(0.4, -0.7), b(1.3, 0.2), c(-0.9, 0.5);
  for (int i = 0; i < 40; ++i) {
    const double r = (i + 1) * h;
    u[static_cast<std::size_t>(i)] = a + b * r + c * r * r;
  }
  const auto fit = detail::boundary_fit(u, h);
  CHECK(std::abs(fit.value - a) <= 1e-13);
  CHECK(std::abs(fit.deriv - b) <= 1e-12);
  CHECK(fit.misfit <= 1e-13);
}

TEST_CASE("boundary residual trivial cases") {
  Constants c = coupled(1.0);
  const double b = ibc_coefficient(c);
  CHECK(b < 0.0);  // attractive sign convention of the coupling constant

  RadialIbcState s;
  s.spacing = 0.02;
  s.constants = c;
  const cplx k(0.7, 0.2);
  s.u.assign(64, k);
  s.c0 = k / b;
  CHECK(check_ibc(s) <= 1e-13 * std::abs(k));

  // linear data extrapolates to zero at the origin; residual is |b c0| itself
  for (int i = 0; i < 64; ++i) s.u[static_cast<std::size_t>(i)] = s.radius(i);
  s.c0 = cplx(1.0);
  CHECK(std::abs(check_ibc(s) - std::abs(b)) <= 1e-12);

  RadialIbcState tiny = s;
  tiny.u.resize(8);
  CHECK_THROWS_AS(check_ibc(tiny), ShapeError);
}

TEST_CASE("spectrum matches the transcendental eigencondition") {
  Constants c = coupled(0.5);
  const double C = c.coupling * c.coupling * c.masses[0] * c.masses[0] /
                   (kPi * c.hbar * c.hbar * c.hbar * c.hbar);

  auto es512 = ibc_spectrum(512, kOuter / 512, c, 6);
  auto es1024 = ibc_spectrum(1024, kOuter / 1024, c, 6);

  CHECK(es1024.max_imaginary <= 1e-12);
  CHECK(es1024.max_asymmetry <= 1e-10);
  CHECK(es1024.values.front() > 0.0);  // bounded below, no spurious deep level
  CHECK(std::is_sorted(es1024.values.begin(), es1024.values.end()));

  const double bound[4] = {4e-4, 6e-5, 1.5e-5, 1e-5};
  for (int n = 0; n < 4; ++n) {
    const double k = oracle_k(n, kOuter, C);
    const double exact = 0.5 * c.hbar * c.hbar * k * k / c.masses[0];
    const double rel = std::abs(es1024.values[static_cast<std::size_t>(n)] - exact) / exact;
    CHECK(rel <= bound[n]);
  }

  // first-order convergence of the lowest level, and its extrapolant
  const double exact0 = 0.5 * std::pow(oracle_k(0, kOuter, C), 2);
  const double e512 = std::abs(es512.values[0] - exact0);
  const double e1024 = std::abs(es1024.values[0] - exact0);
  CHECK(e512 / e1024 >= 1.8);
  CHECK(e512 / e1024 <= 2.2);
  const double richardson = 2.0 * es1024.values[0] - es512.values[0];
  CHECK(std::abs(richardson - exact0) / exact0 <= 1e-6);
}

TEST_CASE("lattice sines are exact eigenvectors when the coupling vanishes") {
  Constants c = coupled(0.0);
  const int N = 512;
  const double h = kOuter / N;
  const double k = 2.0 * kPi / kOuter;  // second box mode
  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.c0 = cplx(0.3, -0.4);
  s.u.resize(N);
  for (int i = 0; i < N; ++i) s.u[static_cast<std::size_t>(i)] = std::sin(k * s.radius(i));

  const auto out = apply_ibc_hamiltonian(s);
  const double kin = c.hbar * c.hbar / (2.0 * c.masses[0] * h * h);
  const double lambda = kin * 2.0 * (1.0 - std::cos(k * h));
  CHECK(out.c0 == cplx(0.0));  // the empty sector decouples entirely
  double worst = 0.0;
  for (int i = 0; i + 1 < N; ++i)
    worst = std::max(worst, std::abs(out.u[static_cast<std::size_t>(i)] -
                                     lambda * s.u[static_cast<std::size_t>(i)]));
  // cancellation in the second difference leaves an O(eps * kin) residue
  CHECK(worst <= 1e-14 * kin);

  // and the decoupled amplitude is frozen by the propagator
  RadialIbcState w = s;
  for (int i = 0; i < 50; ++i) w = evolve_ibc(w, 0.01);
  CHECK(std::abs(w.c0 - s.c0) <= 3e-15);
}

TEST_CASE("windowed constant annihilates interior rows") {
  Constants c = coupled(1.3);
  const int N = 512;
  const double h = kOuter / N;
  const double b = ibc_coefficient(c);
  const cplx k(0.6, -0.1);
  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.u.assign(N, cplx(0.0));
  for (int i = 0; i <= 40; ++i) s.u[static_cast<std::size_t>(i)] = k;
  s.c0 = k / b;  // boundary relation exact for constant data

  const auto out = detail::apply_ibc_raw(s);
  const double kin = c.hbar * c.hbar / (2.0 * c.masses[0] * h * h);
  // the ghost row: kin*(2k - k) + col0*c0 = kin*k - kin*b*(k/b) cancels
  CHECK(std::abs(out.u[0]) <= 1e-12 * kin * std::abs(k));
  for (int i = 1; i <= 35; ++i) CHECK(std::abs(out.u[static_cast<std::size_t>(i)]) == 0.0);
  // h00 c0 + row0 u0 = -g b/h * (k/b) + g/h * k cancels the same way
  CHECK(std::abs(out.c0) <= 1e-12 * c.coupling * std::abs(k) / h);
}

TEST_CASE("exponential source row converges at first order") {
  Constants c = coupled(1.0);
  const double kappa = 2.0;
  const double b = ibc_coefficient(c);
  double err[2];
  int idx = 0;
  for (int N : {1024, 2048}) {
    const double h = kOuter / N;
    RadialIbcState s;
    s.spacing = h;
    s.constants = c;
    s.u.resize(N);
    for (int i = 0; i < N; ++i)
      s.u[static_cast<std::size_t>(i)] = b * std::exp(-kappa * s.radius(i));
    s.c0 = detail::boundary_fit(s.u, h).value / b;
    const auto out = apply_ibc_hamiltonian(s);
    // continuum row is g u'(0+) = -g kappa b c0; the one-sided difference
    // carries a first-order defect bounded by 0.6 g kappa^2 h |b c0|
    const cplx target = -c.coupling * kappa * b * s.c0;
    err[idx] = std::abs(out.c0 - target);
    CHECK(err[idx] <= 0.6 * c.coupling * kappa * kappa * h * std::abs(b * s.c0));
    ++idx;
  }
  CHECK(err[0] / err[1] >= 1.9);
  CHECK(err[0] / err[1] <= 2.2);
}

TEST_CASE("operator is symmetric in the weighted metric") {
  Constants c = coupled(0.9);
  const int N = 256;
  const double h = kOuter / N;
  const double b = ibc_coefficient(c);

  // twenty states honoring the boundary relation: sine mixtures, c0 slaved
  std::vector<RadialIbcState> states;
  RngStream rng(4242, 0);
  for (int s = 0; s < 20; ++s) {
    RadialIbcState st;
    st.spacing = h;
    st.constants = c;
    st.u.assign(N, cplx(0.0));
    for (int n = 1; n <= 10; ++n) {
      const cplx a(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      for (int i = 0; i < N; ++i)
        st.u[static_cast<std::size_t>(i)] += a * std::sin(n * kPi * st.radius(i) / kOuter);
    }
    st.c0 = detail::boundary_fit(st.u, h).value / b;
    st.normalize();
    states.push_back(std::move(st));
  }

  double worst = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = i; j < states.size(); ++j) {
      const auto hx = detail::apply_ibc_raw(states[i]);
      const auto hy = detail::apply_ibc_raw(states[j]);
      const cplx lhs = weighted_inner(states[i], hy);
      const cplx rhs = std::conj(weighted_inner(states[j], hx));
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  CHECK(worst <= 1e-8);   // the stated bound
  CHECK(worst <= 1e-11);  // what the construction actually delivers
}

TEST_CASE("thousand-step propagation conserves norm and the boundary relation") {
  Constants c = coupled(1.0);
  auto s0 = mixture_state(1024, c);
  RadialIbcState s = s0;
  double prev = s.total_norm2();
  double max_step = 0.0, worst_resid = 0.0;
  for (int i = 0; i < 1000; ++i) {
    s = evolve_ibc(s, 0.01);
    max_step = std::max(max_step, std::abs(s.total_norm2() - prev));
    prev = s.total_norm2();
    worst_resid = std::max(worst_resid, check_ibc(s) / std::abs(ibc_coefficient(c) * s.c0));
  }
  CHECK(max_step <= 1e-12);
  CHECK(std::abs(s.total_norm2() - s0.total_norm2()) <= 1e-11);
  CHECK(worst_resid <= 1e-6);
}

TEST_CASE("eigenstate propagation matches the Cayley phase") {
  Constants c = coupled(0.5);
  const int N = 512;
  const double h = kOuter / N;
  auto es = ibc_spectrum(N, h, c, 2);
  auto g0 = state_from_modes(es, N, h, c, {cplx(1.0)});

  const double dt = 0.01;
  RadialIbcState s = g0;
  for (int i = 0; i < 200; ++i) s = evolve_ibc(s, dt);
  // each step multiplies the eigenvector by (1 - i tau E)/(1 + i tau E)
  const double tau = 0.5 * dt / c.hbar;
  const double phase = -200.0 * 2.0 * std::atan(tau * es.values[0]);
  CHECK(std::abs(s.c0 - g0.c0 * std::polar(1.0, phase)) <= 1e-10);
  double dmax = 0.0;
  for (int i = 0; i < N; ++i)
    dmax = std::max(dmax, std::abs(std::abs(s.u[static_cast<std::size_t>(i)]) -
                                   std::abs(g0.u[static_cast<std::size_t>(i)])));
  CHECK(dmax <= 1e-10);
}

TEST_CASE("probability leaves the empty sector exactly through the boundary flux") {
  Constants c = coupled(1.0);
  const int N = 512;
  const double h = kOuter / N;
  auto es = ibc_spectrum(N, h, c, 5);
  auto s = state_from_modes(es, N, h, c,
                            {cplx(0.75), cplx(0.5) * std::polar(1.0, 0.9),
                             cplx(0.4) * std::polar(1.0, -1.7)});
  const double dt = 1e-3;
  for (int i = 0; i < 400; ++i) s = evolve_ibc(s, dt);  // beat drives real flux
  auto sb = evolve_ibc(s, dt);
  auto sc = evolve_ibc(sb, dt);

  const double lhs = (std::norm(sc.c0) - std::norm(s.c0)) / (2.0 * dt);
  const auto fit = detail::boundary_fit(sb.u, h);
  const double rhs =
      -4.0 * kPi * (c.hbar / c.masses[0]) * std::imag(std::conj(fit.value) * fit.deriv);
  CHECK(std::abs(lhs - rhs) / std::abs(rhs) <= 1e-2);

  // the semidiscrete identity, evaluated at the low-mode state itself
  const double disc =
      2.0 * c.coupling / (c.hbar * h) * std::imag(std::conj(sb.c0) * sb.u[0]);
  CHECK(std::abs(lhs - disc) / std::abs(disc) <= 1e-6);

  // and exactly, against the step midpoint the propagator conserves
  const cplx m0 = 0.5 * (s.c0 + sb.c0), m1 = 0.5 * (s.u[0] + sb.u[0]);
  const double step = (std::norm(sb.c0) - std::norm(s.c0)) / dt;
  const double mid = 2.0 * c.coupling / (c.hbar * h) * std::imag(std::conj(m0) * m1);
  CHECK(std::abs(step - mid) / std::abs(step) <= 1e-9);
}

TEST_CASE("emission rate worked examples") {
  Constants c = coupled(1.0);
  const int N = 2048;
  const double R = 16.0;
  const double h = R / N;

  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.u.resize(N);

  // real radial data carries no flux
  s.c0 = cplx(0.5);
  for (int i = 0; i < N; ++i) {
    const double r = s.radius(i);
    s.u[static_cast<std::size_t>(i)] = std::exp(-(r - 3.0) * (r - 3.0));
  }
  CHECK(emission_rate(s) == 0.0);

  // ingoing wave: flux points at the origin, the outward rate clamps to zero
  const double k = 0.25;
  for (int i = 0; i < N; ++i) {
    const double r = s.radius(i);
    s.u[static_cast<std::size_t>(i)] =
        std::polar(1.0, -k * r) * std::clamp(R - r, 0.0, 1.0);
  }
  CHECK(emission_rate(s) == 0.0);

  // outgoing wave A e^{ikr} against |c0|^2 = 1/2
  const cplx A = cplx(0.3) * std::polar(1.0, 0.2);
  s.c0 = cplx(1.0 / std::sqrt(2.0));
  for (int i = 0; i < N; ++i) {
    const double r = s.radius(i);
    s.u[static_cast<std::size_t>(i)] = A * std::polar(1.0, k * r) * std::clamp(R - r, 0.0, 1.0);
  }
  const double expected =
      4.0 * kPi * (c.hbar / c.masses[0]) * std::norm(A) * k / std::norm(s.c0);
  // limited by the second-order boundary derivative: rel err ~ k^2 h^2
  CHECK(std::abs(emission_rate(s) - expected) / expected <= 5.0 * k * k * h * h);

  // a global phase moves nothing
  const double base = emission_rate(s);
  for (double theta : {0.77, 2.1}) {
    RadialIbcState rot = s;
    rot.c0 *= std::polar(1.0, theta);
    for (cplx& a : rot.u) a *= std::polar(1.0, theta);
    CHECK(std::abs(emission_rate(rot) - base) <= 1e-12 * base);
  }

  s.c0 = cplx(0.0);
  CHECK_THROWS_AS(emission_rate(s), UndefinedRateError);
}

TEST_CASE("decoupled process stays quiet") {
  Constants c = coupled(0.0);
  const int N = 512;
  const double h = kOuter / N;
  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.c0 = cplx(0.6);
  s.u.resize(N);
  const double k = 2.0 * kPi / kOuter;
  for (int i = 0; i < N; ++i) s.u[static_cast<std::size_t>(i)] = 0.4 * std::sin(k * s.radius(i));

  StoredIbcTimeline tl({s, s}, 0.0, 1.0);
  IbcEnsembleOptions opts;
  opts.dt = 0.01;
  auto res = run_ibc_ensemble(tl, 200, 99, opts);
  CHECK(res.excluded() == 0);
  for (long j : res.jump_counts) CHECK(j == 0);
  CHECK(res.r_min == 0.5 * h);
  CHECK(res.r_start == h);
}

TEST_CASE("stationary ground state occupation") {
  Constants c = coupled(0.5);
  const int N = 512;
  const double h = kOuter / N;
  auto es = ibc_spectrum(N, h, c, 1);
  auto g0 = state_from_modes(es, N, h, c, {cplx(1.0)});
  const double p1 = g0.sector1_norm2();

  auto tl = propagate_ibc_timeline(g0, 0.1, 21, 5);
  IbcEnsembleOptions opts;
  opts.dt = 0.01;
  opts.checkpoint_frames = {0};
  const long runs = 1000;
  auto res = run_ibc_ensemble(tl, runs, 314, opts);

  CHECK(res.excluded() == 0);
  long occupied = 0;
  const double horizon = 0.1 * 20;
  for (long i = 0; i < runs; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    CHECK(res.jump_counts[ui] == 0);
    // a real profile times a global phase guides a frozen walker
    if (res.finals[ui].sector == 1) {
      CHECK(std::abs(res.finals[ui].positions[0] - res.checkpoints[0][ui].positions[0]) <= 1e-9);
      CHECK(std::abs(res.sector1_time[ui] - horizon) <= 1e-9);
      ++occupied;
    } else {
      CHECK(res.sector1_time[ui] == 0.0);
    }
  }
  const double sigma = std::sqrt(p1 * (1.0 - p1) / runs);
  CHECK(std::abs(static_cast<double>(occupied) / runs - p1) <= 3.0 * sigma);
}

TEST_CASE("driven ensemble is equivariant at checkpoints") {
  Constants c = coupled(1.2);
  const int N = 256;
  const double h = kOuter / N;
  auto s0 = mixture_state(N, c);

  std::vector<RadialIbcState> snaps{s0};
  const int frames = 41;
  const double frame_dt = 0.05;
  for (int k = 1; k < frames; ++k) {
    RadialIbcState s = snaps.back();
    for (int j = 0; j < 4; ++j) s = evolve_ibc(s, frame_dt / 4);
    snaps.push_back(std::move(s));
  }
  StoredIbcTimeline tl(snaps, 0.0, frame_dt);

  IbcEnsembleOptions opts;
  opts.dt = 0.0125;
  opts.checkpoint_frames = {0, 13, 27, 40};
  const long count = 1500;
  auto res = run_ibc_ensemble(tl, count, 2026, opts);

  CHECK(res.excluded() == 0);
  long jumps = 0;
  for (long j : res.jump_counts) jumps += j;
  CHECK(jumps > 50);  // the flow genuinely exchanges the sectors

  for (std::size_t cp = 0; cp < opts.checkpoint_frames.size(); ++cp) {
    const auto& snap = snaps[static_cast<std::size_t>(opts.checkpoint_frames[cp])];
    // sector 0, six 16-cell shells, and a far tail
    std::vector<double> pred(8, 0.0);
    pred[0] = std::norm(snap.c0);
    for (int j = 0; j < N; ++j) {
      const int bin = j < 96 ? 1 + j / 16 : 7;
      pred[static_cast<std::size_t>(bin)] +=
          4.0 * kPi * h * std::norm(snap.u[static_cast<std::size_t>(j)]);
    }
    std::vector<double> emp(8, 0.0);
    for (long i = 0; i < count; ++i) {
      const auto& q = res.checkpoints[cp][static_cast<std::size_t>(i)];
      if (q.sector == 0) {
        emp[0] += 1.0;
        continue;
      }
      const int cell = static_cast<int>(std::floor(q.positions[0] / h - 0.5));
      const int bin = cell < 96 ? 1 + std::max(0, cell) / 16 : 7;
      emp[static_cast<std::size_t>(bin)] += 1.0;
    }
    for (int bn = 0; bn < 8; ++bn) {
      const double p = pred[static_cast<std::size_t>(bn)];
      const double f = emp[static_cast<std::size_t>(bn)] / static_cast<double>(count);
      const double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-12) / count);
      CHECK(std::abs(f - p) <= 3.0 * sigma + 0.004);
    }
  }
}

TEST_CASE("ensembles are reproducible across worker counts") {
  Constants c = coupled(1.2);
  const int N = 256;
  auto s0 = mixture_state(N, c);
  std::vector<RadialIbcState> snaps{s0};
  for (int k = 1; k < 9; ++k) {
    RadialIbcState s = snaps.back();
    for (int j = 0; j < 4; ++j) s = evolve_ibc(s, 0.0125);
    snaps.push_back(std::move(s));
  }
  StoredIbcTimeline tl(snaps, 0.0, 0.05);

  IbcEnsembleOptions opts;
  opts.dt = 0.0125;
  opts.checkpoint_frames = {4};
  opts.workers = 1;
  auto a = run_ibc_ensemble(tl, 256, 77, opts);
  opts.workers = 3;
  auto b = run_ibc_ensemble(tl, 256, 77, opts);

  for (std::size_t i = 0; i < 256; ++i) {
    CHECK(a.status[i] == b.status[i]);
    CHECK(a.jump_counts[i] == b.jump_counts[i]);
    CHECK(a.finals[i].sector == b.finals[i].sector);
    if (a.finals[i].sector == 1) CHECK(a.finals[i].positions[0] == b.finals[i].positions[0]);
    CHECK(a.sector1_time[i] == b.sector1_time[i]);
    CHECK(a.checkpoints[0][i].sector == b.checkpoints[0][i].sector);
  }
}

TEST_CASE("deterministic absorption at the inner radius") {
  Constants c = coupled(1.0);
  const int N = 2048;
  const double h = kOuter / N;
  const double k = 0.5;
  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.u.resize(N);
  for (int i = 0; i < N; ++i) {
    const double r = s.radius(i);
    const double env = std::exp(-(r - 3.0) * (r - 3.0) / (2.0 * 0.8 * 0.8));
    s.u[static_cast<std::size_t>(i)] = 0.5 * std::polar(1.0, -k * r) * env;
  }
  s.c0 = detail::boundary_fit(s.u, h).value / ibc_coefficient(c);
  StoredIbcTimeline tl({s, s}, 0.0, 6.5);

  const double v = c.hbar * k / c.masses[0];  // exact inward drift of this wave
  for (double factor : {0.5, 0.25}) {
    IbcProcessOptions opts;
    opts.r_min_factor = factor;
    RngStream rng(77, 0);
    auto rec = simulate_ibc_process(tl, Configuration{1, {3.0}}, 0.0125, rng, opts);
    REQUIRE(rec.jumps.size() == 1);
    CHECK(rec.jumps[0].kind == JumpKind::absorption);
    CHECK(rec.jumps[0].from.sector == 1);
    CHECK(rec.jumps[0].to.sector == 0);
    const double tstar = (3.0 - factor * h) / v;
    CHECK(std::abs(rec.jumps[0].time - tstar) / tstar <= 1e-5);
    CHECK(rec.status == TrajectoryStatus::completed);
    CHECK(rec.samples.back().second.sector == 0);
    // strictly inward until the event
    for (std::size_t i = 1; i < rec.samples.size(); ++i) {
      if (rec.samples[i].second.sector != 1) break;
      CHECK(rec.samples[i].second.positions[0] < rec.samples[i - 1].second.positions[0]);
    }
  }
}

TEST_CASE("emission windows refine under stiffness and give up eventually") {
  for (double g : {25.0, 354.0}) {
    Constants c = coupled(g);
    const int N = 512;
    const double h = kOuter / N;
    const double k = 0.25;
    const double b = ibc_coefficient(c);
    RadialIbcState s;
    s.spacing = h;
    s.constants = c;
    s.c0 = cplx(1.0);
    s.u.resize(N);
    for (int i = 0; i < N; ++i) {
      const double r = s.radius(i);
      const double win = std::clamp(kOuter - r, 0.0, 1.0);
      s.u[static_cast<std::size_t>(i)] = b * std::polar(1.0, k * r) * std::exp(-0.5 * r) * win;
    }
    s.normalize();
    // boundary value b c0 makes the hazard k g^2 m/(pi hbar^3)
    const double expected = k * g * g * c.masses[0] / (kPi * std::pow(c.hbar, 3));
    CHECK(std::abs(emission_rate(s) - expected) / expected <= 2e-3);

    StoredIbcTimeline tl({s, s}, 0.0, 0.1);
    RngStream rng(13, 0);
    if (g < 100.0) {
      auto rec = simulate_ibc_process(tl, Configuration{0, {}}, 0.0125, rng);
      REQUIRE(rec.jumps.size() == 1);
      CHECK(rec.jumps[0].kind == JumpKind::emission);
      CHECK(rec.samples.back().second.sector == 1);
      CHECK(rec.status == TrajectoryStatus::completed);
    } else {
      CHECK_THROWS_AS(simulate_ibc_process(tl, Configuration{0, {}}, 0.0125, rng),
                      StiffnessError);
    }
  }
}

TEST_CASE("start sampler respects the quantum measure") {
  Constants c = coupled(1.2);
  const int N = 256;
  const double h = kOuter / N;
  auto s0 = mixture_state(N, c);
  IbcSampler sampler(s0);
  RngStream rng(505, 0);

  const int draws = 20000;
  std::vector<double> counts(5, 0.0);  // sector 0 + four 64-cell shells
  for (int i = 0; i < draws; ++i) {
    const auto q = sampler.draw(rng);
    if (q.sector == 0) {
      counts[0] += 1.0;
      continue;
    }
    const int cell = static_cast<int>(std::floor(q.positions[0] / h - 0.5));
    counts[static_cast<std::size_t>(1 + std::clamp(cell, 0, N - 1) / 64)] += 1.0;
  }
  std::vector<double> pred(5, 0.0);
  pred[0] = std::norm(s0.c0);
  for (int j = 0; j < N; ++j)
    pred[static_cast<std::size_t>(1 + j / 64)] +=
        4.0 * kPi * h * std::norm(s0.u[static_cast<std::size_t>(j)]);
  for (int bn = 0; bn < 5; ++bn) {
    const double p = pred[static_cast<std::size_t>(bn)];
    const double sigma = std::sqrt(std::max(p * (1.0 - p), 1e-12) / draws);
    CHECK(std::abs(counts[static_cast<std::size_t>(bn)] / draws - p) <= 4.0 * sigma);
  }

  RadialIbcState dead;
  dead.c0 = cplx(0.0);
  dead.u.assign(64, cplx(0.0));
  dead.spacing = h;
  CHECK_THROWS_AS(IbcSampler(dead), DegenerateDensityError);
}

TEST_CASE("smeared-source spectra approach the boundary-condition gaps") {
  Constants c = coupled(2.0);
  const int N = 512;
  const double h = kOuter / N;
  std::vector<CutoffProfile> profs;
  for (double r : {1.0, 0.5, 0.25, 0.125, 0.0625})
    profs.push_back({CutoffShape::gaussian_bump, r});

  const auto table = renormalization_study(profs, 3, N, h, c);
  REQUIRE(table.rows.size() == 15);

  for (int gap = 1; gap <= 3; ++gap) {
    std::vector<double> err;
    for (const auto& row : table.rows)
      if (row.gap_index == gap) err.push_back(row.rel_error);
    REQUIRE(err.size() == 5);
    for (std::size_t i = 1; i < err.size(); ++i) CHECK(err[i] < err[i - 1]);
  }
  // finest radius = 4 h; the first gap lands within a percent of the target
  const auto& last1 = table.rows[12];
  CHECK(last1.gap_index == 1);
  CHECK(last1.profile_radius == 4.0 * h);
  CHECK(last1.rel_error <= 0.05);
  CHECK(last1.rel_error <= 0.01);

  // csv round trip
  std::ostringstream os;
  write_renorm_csv(table, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "profile_radius,gap_index,cutoff_gap,ibc_gap,rel_error");
  std::size_t row = 0;
  while (std::getline(is, line)) {
    double pr, cg, ig, re;
    int gi;
    REQUIRE(std::sscanf(line.c_str(), "%lf,%d,%lf,%lf,%lf", &pr, &gi, &cg, &ig, &re) == 5);
    REQUIRE(row < table.rows.size());
    CHECK(pr == table.rows[row].profile_radius);
    CHECK(gi == table.rows[row].gap_index);
    CHECK(std::abs(cg - table.rows[row].cutoff_gap) <= 1e-15);
    CHECK(std::abs(ig - table.rows[row].ibc_gap) <= 1e-15);
    ++row;
  }
  CHECK(row == table.rows.size());
}

TEST_CASE("vanishing coupling makes the smeared and boundary spectra identical") {
  Constants c = coupled(0.0);
  const int N = 256;
  const double h = kOuter / N;
  std::vector<CutoffProfile> profs{{CutoffShape::gaussian_bump, 0.5},
                                   {CutoffShape::compact_smooth_bump, 0.25}};
  const auto table = renormalization_study(profs, 2, N, h, c);
  for (const auto& row : table.rows) {
    CHECK(std::abs(row.cutoff_gap - row.ibc_gap) <= 1e-13 * row.ibc_gap);
    CHECK(row.rel_error <= 1e-13);
  }
}

TEST_CASE("smeared propagation conserves norm") {
  Constants c = coupled(1.5);
  const int N = 512;
  const double h = kOuter / N;
  const auto phi = radial_cutoff_values({CutoffShape::gaussian_bump, 0.25}, N, h);

  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.c0 = cplx(0.6, 0.2);
  s.u.resize(N);
  for (int n = 1; n <= 3; ++n)
    for (int i = 0; i < N; ++i)
      s.u[static_cast<std::size_t>(i)] +=
          std::polar(0.5 / n, 0.7 * n) * std::sin(n * kPi * s.radius(i) / kOuter);
  s.normalize();

  RadialIbcState w = s;
  double prev = w.total_norm2(), max_step = 0.0;
  for (int i = 0; i < 1000; ++i) {
    w = evolve_radial_cutoff(w, phi, 0.01);
    max_step = std::max(max_step, std::abs(w.total_norm2() - prev));
    prev = w.total_norm2();
  }
  CHECK(max_step <= 1e-12);
  CHECK(std::abs(w.total_norm2() - s.total_norm2()) <= 1e-11);
  CHECK(w.u.back() == cplx(0.0));
}

TEST_CASE("profile sampling and study argument checks") {
  Constants c = coupled(1.0);
  const double h = kOuter / 512;
  // unit 3D integral on the grid
  for (auto shape : {CutoffShape::gaussian_bump, CutoffShape::compact_smooth_bump}) {
    const auto phi = radial_cutoff_values({shape, 0.5}, 512, h);
    double z = 0.0;
    for (int i = 0; i < 512; ++i) {
      const double r = (i + 1) * h;
      z += 4.0 * kPi * h * r * r * phi[static_cast<std::size_t>(i)];
    }
    CHECK(std::abs(z - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(radial_cutoff_values({CutoffShape::gaussian_bump, -1.0}, 512, h), ArgumentError);
  CHECK_THROWS_AS(radial_cutoff_values({CutoffShape::gaussian_bump, 0.5}, 8, h), ShapeError);
  CHECK_THROWS_AS(radial_cutoff_values({CutoffShape::compact_smooth_bump, 1e-6}, 512, h),
                  DegenerateDensityError);

  std::vector<CutoffProfile> bad{{CutoffShape::gaussian_bump, 0.25},
                                 {CutoffShape::gaussian_bump, 0.5}};
  CHECK_THROWS_AS(renormalization_study(bad, 2, 512, h, c), ArgumentError);
  CHECK_THROWS_AS(renormalization_study({}, 2, 512, h, c), ArgumentError);
  std::vector<CutoffProfile> one{{CutoffShape::gaussian_bump, 0.5}};
  CHECK_THROWS_AS(renormalization_study(one, 0, 512, h, c), ArgumentError);

  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.u.assign(512, cplx(0.0));
  const auto phi = radial_cutoff_values({CutoffShape::gaussian_bump, 0.5}, 256, kOuter / 256);
  CHECK_THROWS_AS(apply_radial_cutoff_hamiltonian(s, phi), ShapeError);
}

TEST_CASE("process and propagator argument checks") {
  Constants c = coupled(1.0);
  const int N = 64;
  const double h = kOuter / N;
  const double b = ibc_coefficient(c);
  RadialIbcState s;
  s.spacing = h;
  s.constants = c;
  s.u.resize(N);
  for (int i = 0; i < N; ++i)
    s.u[static_cast<std::size_t>(i)] = std::sin(kPi * s.radius(i) / kOuter);
  s.c0 = detail::boundary_fit(s.u, h).value / b;
  s.normalize();

  CHECK_THROWS_AS(evolve_ibc(s, -1.0), ArgumentError);
  RadialIbcState off = s;
  off.c0 += cplx(0.5);  // breaks the boundary relation outright
  CHECK_THROWS_AS(evolve_ibc(off, 0.01), BoundaryConditionError);
  CHECK_THROWS_AS(apply_ibc_hamiltonian(off), BoundaryConditionError);

  StoredIbcTimeline tl({s, s}, 0.0, 0.5);
  RngStream rng(1, 0);
  CHECK_THROWS_AS(simulate_ibc_process(tl, Configuration{2, {}}, 0.01, rng), ArgumentError);
  CHECK_THROWS_AS(simulate_ibc_process(tl, Configuration{1, {0.1 * h}}, 0.01, rng),
                  ArgumentError);
  CHECK_THROWS_AS(simulate_ibc_process(tl, Configuration{0, {}}, 0.3, rng), ArgumentError);

  CHECK_THROWS_AS(StoredIbcTimeline({s}, 0.0, 0.5), ArgumentError);
  RadialIbcState other = s;
  other.u.resize(48);
  other.u.back() = cplx(0.0);
  CHECK_THROWS_AS(StoredIbcTimeline({s, other}, 0.0, 0.5), ShapeError);
  CHECK_THROWS_AS(StoredIbcTimeline({s, off}, 0.0, 0.5), BoundaryConditionError);

  IbcEnsembleOptions opts;
  opts.dt = 0.01;
  opts.checkpoint_frames = {5};
  CHECK_THROWS_AS(run_ibc_ensemble(tl, 10, 1, opts), ArgumentError);
  opts.checkpoint_frames = {};
  CHECK_THROWS_AS(run_ibc_ensemble(tl, 0, 1, opts), ArgumentError);

  CHECK_THROWS_AS(ibc_state_from_vector(cvec(10), 64, h, c), ShapeError);
  CHECK_THROWS_AS(propagate_ibc_timeline(s, 0.1, 1), ArgumentError);
  CHECK_THROWS_AS(propagate_ibc_timeline(s, 0.1, 3, 0), ArgumentError);
}
