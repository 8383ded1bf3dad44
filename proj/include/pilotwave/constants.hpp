#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pilotwave/errors.hpp"

namespace pilotwave {

// Model constants. masses has one entry per particle species; most scenarios
// use a single species. coupling: the particle-field coupling g (dimensionless
// conventions, hbar and masses carry the units).
struct Constants {
  double hbar = 1.0;
  std::vector<double> masses{1.0};
  double coupling = 0.0;

  void validate() const {
    if (!(hbar > 0.0) || !std::isfinite(hbar)) throw ArgumentError("hbar must be positive");
    if (masses.empty()) throw ArgumentError("need at least one mass");
    for (double m : masses)
      if (!(m > 0.0) || !std::isfinite(m)) throw ArgumentError("masses must be positive");
    if (!std::isfinite(coupling)) throw ArgumentError("coupling must be finite");
  }

  // Mass of particle j; a single entry means one species for all particles.
  double mass(std::size_t j) const {
    if (masses.size() == 1) return masses[0];
    if (j >= masses.size()) throw ArgumentError("particle index out of range for masses");
    return masses[j];
  }
};

}  // namespace pilotwave
