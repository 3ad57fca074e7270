#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace cotbench {

// Runs fn(i) for i in [0, n) on up to `concurrency` threads. Items complete in
// any order; the returned vector holds the exception thrown by item i (or
// nullptr) so callers can keep results in input order.
template <typename Fn>
std::vector<std::exception_ptr> parallel_for(std::size_t n, std::size_t concurrency, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  if (n == 0) return errors;
  const std::size_t workers = std::clamp<std::size_t>(concurrency, 1, n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
    return errors;
  }
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return errors;
}

// Rethrows the first captured exception, if any.
inline void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace cotbench
