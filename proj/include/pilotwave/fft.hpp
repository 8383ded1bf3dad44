#pragma once

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "pilotwave/grid.hpp"

namespace pilotwave {

// Thin RAII / plan-cache layer over FFTW complex transforms. Plans are created
// with FFTW_ESTIMATE so planning never touches the data (reproducibility) and
// cached per (rank, n, direction). FFTW planning is not thread-safe; execution
// on distinct arrays is.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache c;
    return c;
  }

  // In-place transform of a row-major dim-dimensional cube with n points per axis.
  void transform(cvec& data, int dim, int n, int sign) {
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto key = std::make_tuple(dim, n, sign);
      auto it = plans_.find(key);
      if (it == plans_.end()) {
        std::vector<int> dims(dim, n);
        // planned on a scratch buffer, executed via new-array interface
        std::size_t total = 1;
        for (int a = 0; a < dim; ++a) total *= n;
        if (scratch_.size() < total) scratch_.resize(total);
        auto* buf = reinterpret_cast<fftw_complex*>(scratch_.data());
        plan = fftw_plan_dft(dim, dims.data(), buf, buf, sign,
                             FFTW_ESTIMATE | FFTW_UNALIGNED);
        plans_[key] = plan;
      } else {
        plan = it->second;
      }
    }
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(plan, ptr, ptr);
  }

  ~FftPlanCache() {
    for (auto& [k, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  FftPlanCache() = default;
  std::mutex mu_;
  std::map<std::tuple<int, int, int>, fftw_plan> plans_;
  cvec scratch_;
};

inline void fft_forward(cvec& data, int dim, int n) {
  FftPlanCache::instance().transform(data, dim, n, FFTW_FORWARD);
}

// inverse, normalized so that ifft(fft(x)) == x
inline void fft_inverse(cvec& data, int dim, int n) {
  FftPlanCache::instance().transform(data, dim, n, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(data.size());
  for (cplx& v : data) v *= scale;
}

// Angular wavenumber of mode index i on an n-point periodic axis with spacing h.
inline double fft_wavenumber(int i, int n, double h) {
  const int m = (i <= n / 2) ? i : i - n;
  return 2.0 * kPi * m / (n * h);
}

}  // namespace pilotwave
