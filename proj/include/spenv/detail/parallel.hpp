#ifndef SPENV_DETAIL_PARALLEL_HPP
#define SPENV_DETAIL_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace spenv::detail {

  /// Worker count: SPENV_THREADS if set to a positive integer, otherwise the
  /// hardware concurrency (at least 1).
  inline int default_threads() {
    if (const char* env = std::getenv("SPENV_THREADS")) {
      try {
        const int v = std::stoi(env);
        if (v > 0) return v;
      } catch (...) {
      }
    }
    return std::max(1u, std::thread::hardware_concurrency());
  }

  /*! Runs job(i) for i in [0, n) on up to `threads` workers. Jobs must write
   *  only to their own output slot; exceptions must be handled by the job. */
  inline void parallel_for(int n, const std::function<void(int)>& job, int threads = 0) {
    if (threads <= 0) threads = default_threads();
    threads = std::min(threads, n);
    if (threads <= 1) {
      for (int i = 0; i < n; ++i) job(i);
      return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int i = next++; i < n; i = next++) job(i);
      });
    for (auto& th : pool) th.join();
  }

}  // namespace spenv::detail

#endif  // SPENV_DETAIL_PARALLEL_HPP
