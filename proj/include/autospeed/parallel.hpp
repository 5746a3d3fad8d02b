#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace autospeed {

// Worker count: AUTOSPEED_THREADS if set and positive, else the hardware
// concurrency. `cap` > 0 bounds it further.
inline std::size_t worker_count(std::size_t cap = 0) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AUTOSPEED_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) n = static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  if (cap > 0) n = std::min(n, cap);
  return n;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items must be
// independent; results are identical for any worker count. The first
// exception is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace autospeed
