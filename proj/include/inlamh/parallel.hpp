#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace inlamh {

// Runs fn(worker, i) for i in [0, n) on up to `workers` threads. Items are
// handed out dynamically; if any item throws, the exception of the lowest
// failing index is rethrown after all threads finish.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](int worker) {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(worker, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  threads.reserve(nthreads - 1);
  for (std::size_t t = 1; t < nthreads; ++t) threads.emplace_back(body, static_cast<int>(t));
  body(0);
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace inlamh
