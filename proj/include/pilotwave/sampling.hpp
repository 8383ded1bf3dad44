#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pilotwave/grid.hpp"
#include "pilotwave/rng.hpp"

namespace pilotwave {

// Cumulative per-cell mass table for repeated draws from |ψ|². Cells are
// centered on grid points; samples are jittered uniformly inside the cell.
// Draw order per sample: one uniform for the cell, then dim uniforms for the
// jitter, axis 0 first — fixed so streams replay identically.
class DensitySampler {
 public:
  explicit DensitySampler(const GridWavefunction& psi) : spec_(psi.spec) {
    psi.check_shape();
    cum_.resize(psi.amp.size() + 1, 0.0);
    for (std::size_t i = 0; i < psi.amp.size(); ++i) cum_[i + 1] = cum_[i] + std::norm(psi.amp[i]);
    if (!(cum_.back() > 0.0)) throw DegenerateDensityError("zero-norm density");
    const double inv = 1.0 / cum_.back();
    for (double& c : cum_) c *= inv;
  }

  std::vector<double> draw(RngStream& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
    std::size_t cell = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
        0, std::distance(cum_.begin(), it) - 1));
    if (cell >= cum_.size() - 1) cell = cum_.size() - 2;
    std::vector<double> q(spec_.dim);
    // decode row-major multi-index, last axis fastest
    std::size_t rem = cell;
    for (int a = spec_.dim - 1; a >= 0; --a) {
      const std::size_t idx = rem % spec_.points_per_axis;
      rem /= spec_.points_per_axis;
      q[a] = spec_.coord(a, static_cast<int>(idx));
    }
    for (int a = 0; a < spec_.dim; ++a) q[a] += (rng.uniform() - 0.5) * spec_.spacing;
    return q;
  }

 private:
  GridSpec spec_;
  std::vector<double> cum_;
};

inline std::vector<std::vector<double>> sample_from_density(const GridWavefunction& psi,
                                                            RngStream& rng, std::size_t count) {
  DensitySampler sampler(psi);
  std::vector<std::vector<double>> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace pilotwave
