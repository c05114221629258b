#pragma once

// Fixed-partition parallel loops. Work is split into index-ordered blocks
// whose boundaries do not depend on the worker count, and reductions combine
// block results in a fixed pairwise order, so results are bit-identical for
// any number of workers.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace catsel {

inline constexpr std::size_t kRowBlock = 2048;

inline std::size_t block_count(std::size_t n, std::size_t block = kRowBlock) {
  return n == 0 ? 0 : (n + block - 1) / block;
}

/// Calls fn(b) for every b in [0, n_tasks). The first exception thrown by
/// any task is rethrown after all workers have joined.
template <class Fn>
void parallel_for(std::size_t n_tasks, unsigned workers, Fn&& fn) {
  if (workers <= 1 || n_tasks <= 1) {
    for (std::size_t b = 0; b < n_tasks; ++b) fn(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t b = next++; b < n_tasks; b = next++) {
      try {
        fn(b);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const auto n_threads = std::min<std::size_t>(workers, n_tasks);
  std::vector<std::thread> pool;
  pool.reserve(n_threads - 1);
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Pairwise (cascade) sum of parts[lo, hi); T needs operator+ and copy.
template <class T>
T pairwise_sum(const std::vector<T>& parts, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return parts[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(parts, lo, mid) + pairwise_sum(parts, mid, hi);
}

}  // namespace catsel
