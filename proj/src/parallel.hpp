#ifndef WEAKMAP_PARALLEL_HPP_
#define WEAKMAP_PARALLEL_HPP_

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace weakmap {

// Worker cap: WEAKMAP_THREADS if set, else hardware concurrency.
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("WEAKMAP_THREADS")) {
    int cap = std::atoi(env);
    if (cap >= 1 && cap < hw) return cap;
    if (cap >= 1) return cap;
  }
  return hw;
}

// Runs fn(i) for i in [0, n). Each index is processed exactly once; callers
// must write results into per-index slots so the outcome is independent of
// the worker count.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = n;
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace weakmap

#endif  // WEAKMAP_PARALLEL_HPP_
