#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace gext {

/// Worker count used when a config asks for 0 ("auto").
inline unsigned resolve_workers(unsigned requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Number of threads parallel_for will actually start; worker ids are below it.
inline unsigned effective_workers(std::size_t count, unsigned requested) {
  const auto cap = static_cast<unsigned>(std::max<std::size_t>(count, 1));
  return std::max(1u, std::min(resolve_workers(requested), cap));
}

/// Runs fn(index, worker) for index in [0, count) on `workers` threads.
///
/// Work is handed out through a shared counter; callers must write results into
/// slots keyed by `index` so that the reduction order is fixed. The first
/// exception (lowest index) is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  workers = effective_workers(count, workers);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i, 0u);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = count;

  auto body = [&](unsigned worker) {
    for (;;) {
      if (failed.load(std::memory_order_relaxed)) return;
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        fn(i, worker);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(body, w);
  body(0);
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace gext
