#pragma once

// Helpers shared by the library sources: seed derivation and a
// deterministic strided thread split.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace bright::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(a) ^ b) ^ c);
}

// Runs fn(i) for i in [0, n); worker t handles i = t, t + threads, ...
// The first exception thrown by any worker is rethrown after all join.
template <class Fn>
void parallel_for(std::uint32_t n, std::uint32_t threads, Fn&& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::uint32_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::uint32_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::uint32_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace bright::detail
