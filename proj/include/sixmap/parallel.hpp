#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace sixmap {

// Process-wide worker cap (the CLI's --jobs).  1 runs everything inline.
inline std::size_t& job_limit() {
  static std::size_t jobs = 1;
  return jobs;
}

inline void set_jobs(std::size_t jobs) { job_limit() = std::max<std::size_t>(1, jobs); }

// Calls fn(i) for i in [0, count).  Tasks are independent; callers that
// reduce results do so afterwards in index order, so output never depends on
// the worker count.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(job_limit(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto run = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace sixmap
