#pragma once

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "pilotwave/errors.hpp"

namespace pilotwave {

// Uniform-bin counting histogram; out-of-range samples are tallied separately
// so the caller can fold them into excluded_fraction. Integer counts keep
// aggregation exactly associative across workers.
struct Histogram {
  double lo = 0.0, hi = 1.0;
  int bins = 1;
  std::vector<std::int64_t> counts;
  std::int64_t out_of_range = 0;

  Histogram() = default;
  Histogram(double lo_, double hi_, int bins_) : lo(lo_), hi(hi_), bins(bins_), counts(bins_, 0) {
    if (!(hi > lo) || bins_ < 1) throw ArgumentError("bad histogram range");
  }

  void add(double x) {
    if (x < lo || x >= hi) {
      ++out_of_range;
      return;
    }
    int b = static_cast<int>((x - lo) / (hi - lo) * bins);
    if (b >= bins) b = bins - 1;
    ++counts[b];
  }

  void merge(const Histogram& o) {
    for (int b = 0; b < bins; ++b) counts[b] += o.counts[b];
    out_of_range += o.out_of_range;
  }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }
  double center(int b) const { return lo + (b + 0.5) * (hi - lo) / bins; }
  double width() const { return (hi - lo) / bins; }
};

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

// Goodness of fit of observed counts against expected probabilities
// (renormalized over the included bins). Bins with negligible expected mass
// and zero observations are dropped from the statistic.
inline ChiSquareResult chi_square_test(const std::vector<std::int64_t>& observed,
                                       const std::vector<double>& expected_probs) {
  if (observed.size() != expected_probs.size() || observed.empty())
    throw ArgumentError("chi-square inputs mismatched");
  double psum = 0.0;
  std::int64_t n = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected_probs[i] < 0.0) throw ArgumentError("negative expected probability");
    psum += expected_probs[i];
    n += observed[i];
  }
  if (!(psum > 0.0) || n == 0) throw ArgumentError("degenerate chi-square input");
  ChiSquareResult r;
  int used = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = static_cast<double>(n) * expected_probs[i] / psum;
    if (e < 1e-9) {
      if (observed[i] > 0) {
        // observation in a zero-probability bin: statistic diverges
        r.statistic = std::numeric_limits<double>::infinity();
      }
      continue;
    }
    const double d = static_cast<double>(observed[i]) - e;
    r.statistic += d * d / e;
    ++used;
  }
  r.dof = used > 1 ? used - 1 : 1;
  r.p_value = std::isinf(r.statistic)
                  ? 0.0
                  : boost::math::gamma_q(0.5 * r.dof, 0.5 * r.statistic);
  return r;
}

// Piecewise-linear CDF built from per-cell masses on a uniform partition of
// [lo, hi]; the reference distribution for KS against gridded densities.
class PiecewiseCdf {
 public:
  PiecewiseCdf(double lo, double hi, std::vector<double> cell_masses) : lo_(lo), hi_(hi) {
    double s = 0.0;
    for (double m : cell_masses) {
      if (m < 0.0) m = 0.0;  // clip tiny negatives from roundoff
      s += m;
    }
    if (!(s > 0.0)) throw ArgumentError("zero-mass density for CDF");
    cum_.resize(cell_masses.size() + 1, 0.0);
    for (std::size_t i = 0; i < cell_masses.size(); ++i)
      cum_[i + 1] = cum_[i] + std::max(cell_masses[i], 0.0) / s;
    cum_.back() = 1.0;
  }

  double operator()(double x) const {
    if (x <= lo_) return 0.0;
    if (x >= hi_) return 1.0;
    const double t = (x - lo_) / (hi_ - lo_) * (cum_.size() - 1);
    std::size_t i = static_cast<std::size_t>(t);
    if (i + 1 >= cum_.size()) i = cum_.size() - 2;
    const double u = t - static_cast<double>(i);
    return cum_[i] + u * (cum_[i + 1] - cum_[i]);
  }

 private:
  double lo_, hi_;
  std::vector<double> cum_;
};

// Two-sided KS distance between an empirical sample and a reference CDF.
template <typename Cdf>
double ks_statistic(std::vector<double> samples, const Cdf& cdf) {
  if (samples.empty()) throw ArgumentError("KS needs samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::abs((i + 1) / n - f));
    d = std::max(d, std::abs(i / n - f));
  }
  return d;
}

// total-variation distance between two probability vectors on shared bins
inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ArgumentError("TV inputs mismatched");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

struct DistanceMetrics {
  double total_variation = 0.0;
  double ks = -1.0;  // -1 marks "not applicable" (multi-dim binning)
  double chi_square = 0.0;
  int chi_square_dof = 0;
  double chi_square_p = 1.0;
};

struct EnsembleReport {
  std::size_t sample_count = 0;
  int bins_per_axis = 0;
  int bin_dim = 1;
  std::vector<double> bin_centers;  // per-axis centers, concatenated when bin_dim == 2
  std::vector<double> histogram_empirical;
  std::vector<double> histogram_theoretical;
  DistanceMetrics metrics;
  double excluded_fraction = 0.0;
};

}  // namespace pilotwave
