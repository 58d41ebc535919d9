#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace gens {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("GENS_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

// Static partition of [0, n) into contiguous chunks, one worker per chunk.
// fn(begin, end, slot) runs on worker `slot`; slots are merged by the caller
// in index order, which keeps reductions deterministic.
template <class Fn>
inline void parallel_chunks(size_t n, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, int(n) > 0 ? int(n) : 1));
  if (threads == 1) {
    fn(size_t(0), n, 0);
    return;
  }
  std::vector<std::thread> pool;
  size_t per = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    size_t b = std::min(n, size_t(t) * per);
    size_t e = std::min(n, b + per);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e, t] { fn(b, e, t); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace gens
