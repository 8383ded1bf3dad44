#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace pilotwave {

// Worker count: explicit request wins, then PILOTWAVE_WORKERS, then 1.
// Parallelism must never change results, so the default stays serial.
inline int resolve_worker_count(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PILOTWAVE_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Static contiguous chunking over [0, count): worker w handles one fixed
// slice, so any fn writing only to per-index slots is deterministic
// regardless of worker count. First worker exception is rethrown here.
inline void parallel_for_indices(int workers, long count,
                                 const std::function<void(long)>& fn) {
  if (count <= 0) return;
  if (workers <= 1 || count == 1) {
    for (long i = 0; i < count; ++i) fn(i);
    return;
  }
  if (workers > count) workers = static_cast<int>(count);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::exception_ptr first_error = nullptr;
  std::atomic_flag error_claimed = ATOMIC_FLAG_INIT;
  const long base = count / workers, extra = count % workers;
  long begin = 0;
  for (int w = 0; w < workers; ++w) {
    const long len = base + (w < extra ? 1 : 0);
    const long end = begin + len;
    threads.emplace_back([&, begin, end] {
      try {
        for (long i = begin; i < end; ++i) fn(i);
      } catch (...) {
        if (!error_claimed.test_and_set()) first_error = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace pilotwave
