#pragma once

#include <thread>
#include <vector>

namespace rkd {

// Ordered parallel map: out[i] = fn(i) for i in [0, n). Output slot i depends
// only on index i, so the result is identical for any thread count; ordering
// is by index, never by completion.
template <typename T, typename Fn>
std::vector<T> ordered_parallel_map(int n, int threads, Fn&& fn) {
  std::vector<T> out(static_cast<size_t>(n));
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = fn(i);
    return out;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) out[static_cast<size_t>(i)] = fn(i);
    });
  }
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace rkd
