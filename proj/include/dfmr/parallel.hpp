#pragma once
// Deterministic data-parallel helper. Work is split into contiguous chunks
// over independent outputs; every reduction happens serially after the join,
// so results are bit-identical for any worker count (including 1).

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

namespace dfmr {

inline unsigned worker_count() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1u : n;
}

// body(begin, end) is called on disjoint ranges covering [0, n).
template <class F>
void parallel_for(int64_t n, F&& body) {
  if (n <= 0) return;
  unsigned use = static_cast<unsigned>(
      std::min<int64_t>(static_cast<int64_t>(worker_count()), n));
  if (use <= 1) {
    body(static_cast<int64_t>(0), n);
    return;
  }
  int64_t chunk = (n + use - 1) / use;
  std::vector<std::thread> pool;
  pool.reserve(use);
  for (unsigned w = 0; w < use; ++w) {
    int64_t b = static_cast<int64_t>(w) * chunk;
    int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace dfmr
