#pragma once

#include <exception>
#include <mutex>

namespace frdesign {

/// Runs fn(i) for i in [0, n) across OpenMP threads (serially without OpenMP).
/// Iterations must write disjoint state; the first exception thrown is rethrown
/// on the calling thread once the loop has finished.
template <typename Fn>
void parallel_for(long n, Fn&& fn, bool dynamic = false) {
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&](long i) {
    try {
      fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  if (dynamic) {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) body(i);
  } else {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) body(i);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace frdesign
