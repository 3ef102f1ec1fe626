#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ivqr {

/// Thread-count hint used by grid evaluations and Monte Carlo loops.
/// 0 means "use the hardware concurrency".
inline unsigned& thread_hint()
{
  static unsigned hint = 0;
  return hint;
}

namespace detail {

inline unsigned effective_threads(std::size_t work_items)
{
  unsigned t = thread_hint();
  if (t == 0)
    t = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(work_items, 1)));
}

/// Calls f(i) for i in [0, n). Each index is evaluated exactly once; callers
/// write into per-index slots so results do not depend on scheduling. The
/// first exception thrown by any task is rethrown on the calling thread.
template <class F>
void parallel_for(std::size_t n, F&& f)
{
  const unsigned threads = effective_threads(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i)
      f(i);
    return;
  }
  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n)
        return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure)
          failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back(worker);
  for (auto& th : pool)
    th.join();
  if (failure)
    std::rethrow_exception(failure);
}

} // namespace detail
} // namespace ivqr
